use std::borrow::Cow;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::augment::augment_random_crop;
use super::config::TrainConfig;
use crate::dataio::{
    build_vocabulary, load_embeddings, load_samples, DatasetManifest, EmbeddingTable, Sample,
    Vocabulary,
};
use crate::diffcore::{Rng, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward, sample_loss, Model, ModelDims, ModelParams};
use crate::params::Parameters;

/// Generator streams derived from the run seed.
pub const INIT_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const EMBEDDING_STREAM: u64 = 3;

/// Mean losses over one pass through the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub sample_count: usize,
    pub mean_total: f64,
    pub mean_main: f64,
    pub mean_att: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,sample_count,mean_total,mean_main,mean_att";

/// Renders the loss log as CSV; floats use their shortest round-trip form.
pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.sample_count, e.mean_total, e.mean_main, e.mean_att
        ));
    }
    out
}

/// Vocabulary, embeddings, and samples built from a training manifest.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub samples: Vec<Sample>,
}

pub fn prepare_training_data(
    manifest: &DatasetManifest,
    embeddings_path: impl AsRef<Path>,
    config: &TrainConfig,
) -> Result<TrainingData> {
    manifest.validate()?;
    let vocab = build_vocabulary(manifest.queries(), config.min_freq)?;
    let mut rng = Rng::with_stream(config.seed, EMBEDDING_STREAM);
    let embeddings = load_embeddings(embeddings_path, &vocab, &mut rng)?;
    let samples = load_samples(manifest, &vocab, config.max_query_len)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training manifest has no annotations".into()));
    }
    Ok(TrainingData {
        vocab,
        embeddings,
        samples,
    })
}

/// Owns everything that evolves during training, so a run can be saved
/// and resumed bit for bit.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(super) config: TrainConfig,
    pub(super) params: ModelParams,
    pub(super) adam: AdamState,
    pub(super) rng: Rng,
    pub(super) epoch: usize,
    pub(super) log: Vec<EpochLog>,
    pub(super) vocab: Vocabulary,
    pub(super) embeddings: EmbeddingTable,
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab: Vocabulary, embeddings: EmbeddingTable, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if embeddings.len() != vocab.len() {
            return Err(Error::Dimension(format!(
                "{} embedding rows for a vocabulary of {}",
                embeddings.len(),
                vocab.len()
            )));
        }
        let dims = ModelDims {
            feature_dim,
            embed_dim: embeddings.dim(),
            sentence_hidden: config.sentence_hidden,
            attention_dim: config.attention_dim,
            localization_hidden: config.localization_hidden,
        };
        let params = ModelParams::init(&dims, &mut Rng::with_stream(config.seed, INIT_STREAM));
        let adam = AdamState::new(&params);
        let rng = Rng::with_stream(config.seed, TRAIN_STREAM);
        Ok(Trainer {
            config,
            params,
            adam,
            rng,
            epoch: 0,
            log: Vec::new(),
            vocab,
            embeddings,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the total epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.config.epochs = epochs;
        Ok(())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn model(&self) -> Model {
        Model {
            params: self.params.clone(),
            embeddings: self.embeddings.clone(),
            dropout: self.config.dropout,
        }
    }

    /// Fails with a mismatch error if `vocab` differs from the one the
    /// run was started with.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let (expected, found) = (self.vocab.hash(), vocab.hash());
        if expected != found {
            return Err(Error::VocabularyMismatch { expected, found });
        }
        Ok(())
    }

    /// One shuffled pass over `samples`. Gradients of `accumulation`
    /// consecutive samples are averaged into a single optimizer step.
    pub fn run_epoch(&mut self, samples: &[Sample]) -> Result<EpochLog> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no training samples".into()));
        }
        let objective = self.config.objective();
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        self.rng.shuffle(&mut order);

        let shapes: Vec<Vec<usize>> = self.params.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let zero = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        let mut acc = zero();
        let mut pending = 0usize;
        let (mut sum_total, mut sum_main, mut sum_att) = (0.0, 0.0, 0.0);

        for (k, &i) in order.iter().enumerate() {
            let sample = if self.config.augment {
                Cow::Owned(augment_random_crop(&samples[i], &mut self.rng)?)
            } else {
                Cow::Borrowed(&samples[i])
            };
            let mut tape = Tape::new();
            let mut leaves = Vec::new();
            let vars = self.params.bind(&mut tape, &mut leaves);
            let out = forward(
                &mut tape,
                &vars,
                sample.features.to_tensor(),
                &sample.token_ids,
                &self.embeddings,
                self.config.dropout,
                &mut self.rng,
                true,
            )?;
            let loss = sample_loss(&mut tape, &out, sample.tau_s, sample.tau_e, &objective)?;
            let total = tape.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss {total} on `{}` annotation {} in epoch {epoch}",
                    sample.video_id, sample.annotation
                )));
            }
            sum_total += total;
            sum_main += tape.value(loss.main).item();
            sum_att += tape.value(loss.attention).item();

            let grads = tape.backward(loss.total)?;
            for (slot, leaf) in acc.iter_mut().zip(&leaves) {
                if let Some(g) = grads.get(*leaf) {
                    for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            pending += 1;
            if pending == self.config.accumulation || k + 1 == order.len() {
                if pending > 1 {
                    let scale = 1.0 / pending as f64;
                    for slot in &mut acc {
                        slot.data_mut().iter_mut().for_each(|v| *v *= scale);
                    }
                }
                self.adam.step(
                    &mut self.params,
                    &acc,
                    self.config.learning_rate,
                    self.config.weight_decay,
                )?;
                acc = zero();
                pending = 0;
            }
        }

        let count = samples.len() as f64;
        let entry = EpochLog {
            epoch,
            sample_count: samples.len(),
            mean_total: sum_total / count,
            mean_main: sum_main / count,
            mean_att: sum_att / count,
        };
        debug!("epoch {epoch}: {entry:?}");
        info!(
            "epoch {epoch}/{}: loss {:.5} (main {:.5}, attention {:.5})",
            self.config.epochs, entry.mean_total, entry.mean_main, entry.mean_att
        );
        self.epoch = epoch;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs the remaining epochs, calling `after_epoch` once each finishes.
    pub fn run<F>(&mut self, samples: &[Sample], mut after_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_epoch(samples)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

/// Result of a complete training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Trains a fresh model on prepared data for `config.epochs` epochs.
pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome> {
    let feature_dim = data.samples[0].features.d_v();
    let mut trainer = Trainer::new(
        config.clone(),
        data.vocab.clone(),
        data.embeddings.clone(),
        feature_dim,
    )?;
    trainer.run(&data.samples, |_| Ok(()))?;
    Ok(TrainOutcome {
        model: trainer.model(),
        log: trainer.log,
    })
}
