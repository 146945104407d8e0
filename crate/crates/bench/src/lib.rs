//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use tmlga::dataio::{EmbeddingTable, FeatureSequence, Sample, TimeAxis};
use tmlga::diffcore::{Rng, Tensor};
use tmlga::model::{ModelDims, ModelParams};

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("valid shape")
}

/// A model of the given widths with a random sample of `n` feature rows.
pub fn model_fixture(n: usize, hidden: usize) -> (ModelParams, EmbeddingTable, Sample) {
    let mut rng = Rng::new(7);
    let dims = ModelDims {
        feature_dim: 32,
        embed_dim: 16,
        sentence_hidden: hidden,
        attention_dim: hidden,
        localization_hidden: hidden,
    };
    let params = ModelParams::init(&dims, &mut rng);
    let embeddings = EmbeddingTable::from_rows(random_tensor(&mut rng, &[10, 16])).expect("matrix");
    let data = (0..n * 32).map(|_| rng.normal() as f32).collect();
    let sample = Sample {
        video_id: "bench".into(),
        annotation: 0,
        query: "person opens the door".into(),
        features: Arc::new(FeatureSequence::new(n, 32, data).expect("finite")),
        token_ids: vec![2, 3, 4, 5],
        tau_s: n / 4,
        tau_e: n / 2,
        axis: TimeAxis::new(n, 25.0, 16 * n as u64).expect("valid axis"),
        offset: 0,
        t_s: 0.0,
        t_e: 1.0,
    };
    (params, embeddings, sample)
}
