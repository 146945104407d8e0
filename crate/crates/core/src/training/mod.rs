//! Optimizer, augmentation, the epoch loop, and checkpointing.

mod adam;
mod augment;
mod checkpoint;
mod config;
mod trainer;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use augment::{augment_random_crop, crop_prefix};
pub use checkpoint::{load_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use trainer::{
    loss_csv, prepare_training_data, train, EpochLog, Trainer, TrainOutcome, TrainingData,
    EMBEDDING_STREAM, INIT_STREAM, LOSS_CSV_HEADER, TRAIN_STREAM,
};
