//! File formats, vocabulary, embeddings, and the time/feature-index mapping.

mod embeddings;
mod features;
mod manifest;
mod mapping;
mod sample;
mod vocab;

pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingTable, MISSING_INIT_RANGE};
pub use features::{load_features, write_features, FeatureSequence, TMLF_MAGIC, TMLF_VERSION};
pub use manifest::{load_manifest, write_manifest, Annotation, DatasetManifest, VideoEntry};
pub use mapping::{index_to_time, time_to_index, TimeAxis};
pub use sample::{load_samples, samples_for_entry, Sample};
pub use vocab::{
    build_vocabulary, tokenize, Vocabulary, DEFAULT_MAX_QUERY_LEN, DEFAULT_MIN_FREQ, PAD_ID,
    PAD_TOKEN, UNK_ID, UNK_TOKEN,
};
