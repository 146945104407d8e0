use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::vocab::{Vocabulary, PAD_ID};
use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};

/// Half-width of the uniform range used for tokens missing from the file.
pub const MISSING_INIT_RANGE: f64 = 0.05;

/// Frozen word vectors aligned to vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Tensor,
    /// Ids whose rows were randomly initialized.
    missing: Vec<u32>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Tensor) -> Result<Self> {
        let [_, dim] = rows.shape() else {
            return Err(Error::Dimension(format!(
                "embedding rows must be a matrix, got {:?}",
                rows.shape()
            )));
        };
        Ok(EmbeddingTable {
            dim: *dim,
            rows,
            missing: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn missing(&self) -> &[u32] {
        &self.missing
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.rows.row(id as usize)
    }

    /// `[ids.len() × dim]` lookup.
    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("embedding lookup of no tokens".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.len() {
                return Err(Error::Range(format!(
                    "token id {id} outside vocabulary of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(id));
        }
        Tensor::matrix(ids.len(), self.dim, data)
    }
}

/// Parses `token v1 … v_dim` lines. Tokens outside `vocab` are skipped;
/// vocabulary tokens absent from the text get uniform(±0.05) rows drawn from
/// `rng` in id order. The PAD row is always zero.
pub fn parse_embeddings(text: &str, vocab: &Vocabulary, rng: &mut Rng) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut found: HashMap<u32, Vec<f64>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        if values.is_empty() {
            return Err(Error::Format(format!("line {lineno}: token `{token}` has no values")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("line {lineno}: value {} is not finite", i + 1)));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format(format!(
                    "line {lineno}: {} values, expected {d}",
                    values.len()
                )))
            }
            _ => {}
        }
        if let Some(id) = vocab.id(token) {
            found.entry(id).or_insert(values);
        }
    }
    let dim = dim.ok_or_else(|| Error::EmptyInput("embedding file has no vectors".into()))?;

    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut missing = Vec::new();
    for id in 0..vocab.len() as u32 {
        if id == PAD_ID {
            data.extend(std::iter::repeat_n(0.0, dim));
        } else if let Some(v) = found.get(&id) {
            data.extend_from_slice(v);
        } else {
            missing.push(id);
            data.extend((0..dim).map(|_| rng.uniform_range(-MISSING_INIT_RANGE, MISSING_INIT_RANGE)));
        }
    }
    Ok(EmbeddingTable {
        dim,
        rows: Tensor::matrix(vocab.len(), dim, data)?,
        missing,
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, rng: &mut Rng) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab, rng)
}
