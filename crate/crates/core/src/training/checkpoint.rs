//! Binary checkpoint: `TMLC`, u32 version, u64 header length, a JSON
//! header, raw little-endian `f64` payload (parameters, Adam moments,
//! embedding rows), then a SHA-256 digest of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::trainer::{EpochLog, Trainer};
use crate::dataio::{EmbeddingTable, Vocabulary};
use crate::diffcore::{Rng, RngState, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims, ModelParams};
use crate::params::Parameters;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TMLC";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    dims: ModelDims,
    rng: RngState,
    vocab_hash: String,
    vocab: Vec<String>,
    adam_t: u64,
    adam_betas: (f64, f64),
    adam_epsilon: f64,
    params: Vec<TensorInfo>,
    embedding_shape: [usize; 2],
    log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn put(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take(bytes: &[u8], at: &mut usize, count: usize) -> Vec<f64> {
    let out = bytes[*at..*at + 8 * count]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    *at += 8 * count;
    out
}

impl Trainer {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let named = self.params.named();
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            dims: self.params.dims(),
            rng: self.rng.state(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.tokens().to_vec(),
            adam_t: self.adam.t,
            adam_betas: (self.adam.beta1, self.adam.beta2),
            adam_epsilon: self.adam.epsilon,
            params: named
                .iter()
                .map(|(name, t)| TensorInfo {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            embedding_shape: [self.embeddings.len(), self.embeddings.dim()],
            log: self.log.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            put(&mut out, t.data());
        }
        for m in &self.adam.m {
            put(&mut out, m);
        }
        for v in &self.adam.v {
            put(&mut out, v);
        }
        put(&mut out, self.embeddings.rows().data());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Trainer> {
        if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < PREFIX_LEN {
            return Err(Error::Truncation(format!("checkpoint of {} bytes", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = PREFIX_LEN.saturating_add(header_len);
        if bytes.len() < header_end.saturating_add(DIGEST_LEN) {
            return Err(Error::Truncation(format!(
                "checkpoint of {} bytes declares a {header_len}-byte header",
                bytes.len()
            )));
        }
        let corrupted = || Error::Format("checkpoint checksum mismatch, file is corrupted".into());
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end]).map_err(|_| corrupted())?;

        let param_values: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        let embed_values = header.embedding_shape[0] * header.embedding_shape[1];
        let expected = header_end + 8 * (3 * param_values + embed_values) + DIGEST_LEN;
        if bytes.len() < expected {
            return Err(Error::Truncation(format!(
                "checkpoint has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - expected
            )));
        }
        let body = &bytes[..expected - DIGEST_LEN];
        if Sha256::digest(body).as_slice() != &bytes[expected - DIGEST_LEN..] {
            return Err(corrupted());
        }

        header.config.validate()?;
        let mut params = ModelParams::zeros(&header.dims);
        let mut at = header_end;
        let mut infos = header.params.iter();
        let mut mismatch = None;
        params.visit_mut("", &mut |name, t| {
            let values = match infos.next() {
                Some(info) if info.name == name && info.shape == t.shape() => take(bytes, &mut at, t.len()),
                other => {
                    mismatch.get_or_insert(format!(
                        "parameter `{name}` {:?} does not match stored {:?}",
                        t.shape(),
                        other.map(|i| (&i.name, &i.shape))
                    ));
                    return;
                }
            };
            t.data_mut().copy_from_slice(&values);
        });
        if let Some(msg) = mismatch.or_else(|| infos.next().map(|i| format!("unexpected parameter `{}`", i.name))) {
            return Err(Error::Format(msg));
        }

        let mut adam = AdamState::new(&params);
        for m in &mut adam.m {
            *m = take(bytes, &mut at, m.len());
        }
        for v in &mut adam.v {
            *v = take(bytes, &mut at, v.len());
        }
        adam.t = header.adam_t;
        (adam.beta1, adam.beta2) = header.adam_betas;
        adam.epsilon = header.adam_epsilon;

        let [rows, cols] = header.embedding_shape;
        let embeddings = EmbeddingTable::from_rows(Tensor::matrix(rows, cols, take(bytes, &mut at, rows * cols))?)?;
        let vocab = Vocabulary::from_tokens(header.vocab);
        if vocab.hash() != header.vocab_hash {
            return Err(Error::Format("stored vocabulary does not match its hash".into()));
        }
        if embeddings.len() != vocab.len() || embeddings.dim() != header.dims.embed_dim {
            return Err(Error::Format("embedding table does not match vocabulary".into()));
        }

        Ok(Trainer {
            config: header.config,
            params,
            adam,
            rng: Rng::from_state(header.rng),
            epoch: header.epoch,
            log: header.log,
            vocab,
            embeddings,
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write-then-rename keeps the previous checkpoint intact on failure
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_checkpoint_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Trainer::from_checkpoint_bytes(&bytes)
    }
}

/// Loads only what inference needs from a checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, Vocabulary, TrainConfig)> {
    let trainer = Trainer::load_checkpoint(path)?;
    Ok((trainer.model(), trainer.vocab.clone(), trainer.config.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fixture::{tiny_config, tiny_data};

    fn trained() -> Trainer {
        let (vocab, embeddings, samples) = tiny_data();
        let mut t = Trainer::new(tiny_config(), vocab, embeddings, 3).unwrap();
        t.run_epoch(&samples).unwrap();
        t
    }

    #[test]
    fn round_trip_is_exact() {
        let t = trained();
        let bytes = t.to_checkpoint_bytes();
        let back = Trainer::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params, t.params);
        assert_eq!(back.adam, t.adam);
        assert_eq!(back.rng.state(), t.rng.state());
        assert_eq!(back.log, t.log);
        assert_eq!(back.config, t.config);
        assert_eq!(back.embeddings.rows(), t.embeddings.rows());
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let bytes = trained().to_checkpoint_bytes();
        for at in [20, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x10;
            assert!(
                matches!(Trainer::from_checkpoint_bytes(&bad), Err(Error::Format(_))),
                "flip at {at} not detected"
            );
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = trained().to_checkpoint_bytes();
        assert!(matches!(
            Trainer::from_checkpoint_bytes(&bytes[..bytes.len() - 100]),
            Err(Error::Truncation(_))
        ));
        assert!(matches!(
            Trainer::from_checkpoint_bytes(&bytes[..10]),
            Err(Error::Truncation(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Trainer::from_checkpoint_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(Trainer::from_checkpoint_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let t = trained();
        t.save_checkpoint(&path).unwrap();
        let (model, vocab, config) = load_model(&path).unwrap();
        assert_eq!(model.params, t.params);
        assert_eq!(vocab, t.vocab);
        assert_eq!(config, t.config);
    }
}
