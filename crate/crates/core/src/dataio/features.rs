//! TMLF feature files.
//!
//! Layout (little-endian): magic `TMLF`, `u32` version (1), `u32` n,
//! `u32` d_v, then `n·d_v` IEEE-754 `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const TMLF_MAGIC: [u8; 4] = *b"TMLF";
pub const TMLF_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// `n` pre-extracted feature vectors of width `d_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    n: usize,
    d_v: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(n: usize, d_v: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d_v == 0 {
            return Err(Error::Dimension(format!(
                "feature sequence needs n >= 1 and d_v >= 1, got {n}x{d_v}"
            )));
        }
        if data.len() != n * d_v {
            return Err(Error::Dimension(format!(
                "{n}x{d_v} features need {} values, got {}",
                n * d_v,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite feature value at row {}, column {}",
                i / d_v,
                i % d_v
            )));
        }
        Ok(FeatureSequence { n, d_v, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_v..(i + 1) * self.d_v]
    }

    /// Sequence without its first `count` rows.
    pub fn drop_prefix(&self, count: usize) -> Result<Self> {
        if count >= self.n {
            return Err(Error::Range(format!(
                "cannot drop {count} of {} feature rows",
                self.n
            )));
        }
        Ok(FeatureSequence {
            n: self.n - count,
            d_v: self.d_v,
            data: self.data[count * self.d_v..].to_vec(),
        })
    }

    /// Widened `n×d_v` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.d_v, self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("validated dimensions")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&TMLF_MAGIC);
        out.extend_from_slice(&TMLF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_v as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncation(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[..4] != TMLF_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02X?}, expected \"TMLF\"",
                &bytes[..4]
            )));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != TMLF_VERSION {
            return Err(Error::Format(format!("unsupported TMLF version {version}")));
        }
        let (n, d_v) = (word(8) as usize, word(12) as usize);
        let expected = n
            .checked_mul(d_v)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format(format!("header dimensions {n}x{d_v} overflow")))?;
        if bytes.len() != expected {
            return Err(Error::Truncation(format!(
                "{n}x{d_v} features need {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureSequence::new(n, d_v, data)
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features.to_bytes()).map_err(|e| Error::io(path, e))
}
