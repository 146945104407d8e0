use std::sync::Arc;

use crate::dataio::Sample;
use crate::diffcore::Rng;
use crate::error::Result;

/// Drops a random prefix of `c ~ U{0, …, τ_s − 1}` feature rows, shifting
/// the span so it stays in place relative to the video content.
pub fn augment_random_crop(sample: &Sample, rng: &mut Rng) -> Result<Sample> {
    if sample.tau_s <= 1 {
        return Ok(sample.clone());
    }
    let c = rng.int_inclusive(0, sample.tau_s - 1);
    crop_prefix(sample, c)
}

/// Removes the first `count` rows; `count` must be below `tau_s`.
pub fn crop_prefix(sample: &Sample, count: usize) -> Result<Sample> {
    if count == 0 {
        return Ok(sample.clone());
    }
    if count >= sample.tau_s {
        return Err(crate::Error::Range(format!(
            "crop of {count} rows would cut into span starting at {}",
            sample.tau_s
        )));
    }
    let mut out = sample.clone();
    out.features = Arc::new(sample.features.drop_prefix(count)?);
    out.tau_s -= count;
    out.tau_e -= count;
    out.offset += count;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{FeatureSequence, TimeAxis};

    fn sample(n: usize, tau_s: usize, tau_e: usize) -> Sample {
        let data = (0..n).map(|i| i as f32 + 1.0).collect();
        Sample {
            video_id: "v".into(),
            annotation: 0,
            query: "q".into(),
            features: Arc::new(FeatureSequence::new(n, 1, data).unwrap()),
            token_ids: vec![2],
            tau_s,
            tau_e,
            axis: TimeAxis::new(n, 25.0, 25 * n as u64).unwrap(),
            offset: 0,
            t_s: 0.0,
            t_e: 1.0,
        }
    }

    #[test]
    fn hand_index_shift() {
        let s = crop_prefix(&sample(10, 4, 7), 2).unwrap();
        assert_eq!((s.n(), s.tau_s, s.tau_e), (8, 2, 5));
        assert_eq!(s.features.data()[0], 3.0);
        assert_eq!(s.features.data()[7], 10.0);
        assert_eq!(s.offset, 2);
        // the shifted span still addresses the same seconds
        assert_eq!(s.index_to_time(s.tau_s).unwrap(), sample(10, 4, 7).index_to_time(4).unwrap());
    }

    #[test]
    fn start_at_one_is_untouched() {
        let s0 = sample(10, 1, 5);
        let mut rng = Rng::new(0);
        let before = rng.state();
        let s = augment_random_crop(&s0, &mut rng).unwrap();
        assert_eq!((s.n(), s.tau_s, s.tau_e), (10, 1, 5));
        assert_eq!(rng.state(), before);
    }

    #[test]
    fn zero_crop_is_identity() {
        let s = crop_prefix(&sample(10, 4, 7), 0).unwrap();
        assert_eq!((s.n(), s.tau_s, s.tau_e, s.offset), (10, 4, 7, 0));
    }

    #[test]
    fn random_crops_preserve_span_length() {
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let s0 = sample(30, 12, 20);
            let s = augment_random_crop(&s0, &mut rng).unwrap();
            assert!(s.tau_s >= 1);
            assert_eq!(s.tau_e - s.tau_s, 8);
            assert_eq!(s.n() + s.offset, 30);
        }
    }
}
