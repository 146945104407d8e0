use std::sync::Arc;

use super::features::{load_features, FeatureSequence};
use super::manifest::DatasetManifest;
use super::mapping::TimeAxis;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// One (video, query, span) training or evaluation example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub video_id: String,
    /// Position of the annotation within its video entry.
    pub annotation: usize,
    pub query: String,
    pub features: Arc<FeatureSequence>,
    pub token_ids: Vec<u32>,
    /// 1-based start feature index.
    pub tau_s: usize,
    /// 1-based end feature index, `>= tau_s`.
    pub tau_e: usize,
    /// Geometry of the uncropped video.
    pub axis: TimeAxis,
    /// Feature rows removed from the front by augmentation.
    pub offset: usize,
    /// Ground-truth interval in seconds.
    pub t_s: f64,
    pub t_e: f64,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.features.n()
    }

    /// Seconds of a (possibly cropped) 1-based feature index.
    pub fn index_to_time(&self, tau: usize) -> Result<f64> {
        self.axis.index_to_time(tau + self.offset)
    }
}

/// Expands every annotation of every video into a [`Sample`]. Each feature
/// file is read once and shared between the video's samples.
pub fn load_samples(manifest: &DatasetManifest, vocab: &Vocabulary, max_query_len: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(manifest.annotation_count());
    for entry in &manifest.entries {
        if entry.annotations.is_empty() {
            continue;
        }
        let features = Arc::new(load_features(manifest.feature_path(entry))?);
        samples.extend(samples_for_entry(entry, features, vocab, max_query_len)?);
    }
    Ok(samples)
}

pub fn samples_for_entry(
    entry: &super::manifest::VideoEntry,
    features: Arc<FeatureSequence>,
    vocab: &Vocabulary,
    max_query_len: usize,
) -> Result<Vec<Sample>> {
    let axis = TimeAxis::new(features.n(), entry.fps, entry.l)?;
    entry
        .annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let token_ids = vocab.encode_query(&a.query, max_query_len)?;
            let tau_s = axis.time_to_index(a.t_s)?;
            let tau_e = axis.time_to_index(a.t_e)?;
            if tau_s > tau_e {
                return Err(Error::Validation {
                    video_id: entry.video_id.clone(),
                    field: format!("annotations[{i}]"),
                    msg: "span maps to inverted feature indices".into(),
                });
            }
            Ok(Sample {
                video_id: entry.video_id.clone(),
                annotation: i,
                query: a.query.clone(),
                features: Arc::clone(&features),
                token_ids,
                tau_s,
                tau_e,
                axis,
                offset: 0,
                t_s: a.t_s,
                t_e: a.t_e,
            })
        })
        .collect()
}
