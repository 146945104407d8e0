//! Conversion between annotation times and feature positions.
//!
//! A video of `l` frames sampled at `fps` is encoded into `n` feature
//! vectors; time `t` maps to the real position `t·n·fps/l`, which is rounded
//! half-up and clamped to the 1-based index range `[1, n]`.

use crate::error::{Error, Result};

/// Video geometry shared by both directions of the mapping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeAxis {
    /// Number of feature vectors.
    pub n: usize,
    /// Frames per second of the source video.
    pub fps: f64,
    /// Length of the video in frames.
    pub l: u64,
}

impl TimeAxis {
    pub fn new(n: usize, fps: f64, l: u64) -> Result<Self> {
        if n == 0 || l == 0 || !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid time axis n={n}, fps={fps}, l={l}"
            )));
        }
        Ok(TimeAxis { n, fps, l })
    }

    pub fn duration(&self) -> f64 {
        self.l as f64 / self.fps
    }

    /// Seconds covered by one feature step.
    pub fn step(&self) -> f64 {
        self.l as f64 / (self.n as f64 * self.fps)
    }

    pub fn time_to_index(&self, t: f64) -> Result<usize> {
        time_to_index(t, self.n, self.fps, self.l)
    }

    pub fn index_to_time(&self, tau: usize) -> Result<f64> {
        index_to_time(tau, self.n, self.fps, self.l)
    }
}

pub fn time_to_index(t: f64, n: usize, fps: f64, l: u64) -> Result<usize> {
    let duration = l as f64 / fps;
    if !(0.0..=duration).contains(&t) {
        return Err(Error::Range(format!(
            "time {t} s outside video of {duration} s"
        )));
    }
    let tau = t * n as f64 * fps / l as f64;
    let rounded = (tau + 0.5).floor() as usize;
    Ok(rounded.clamp(1, n))
}

pub fn index_to_time(tau: usize, n: usize, fps: f64, l: u64) -> Result<f64> {
    if tau < 1 || tau > n {
        return Err(Error::Range(format!("feature index {tau} outside [1, {n}]")));
    }
    Ok(tau as f64 * l as f64 / (n as f64 * fps))
}
