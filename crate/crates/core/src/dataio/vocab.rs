use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default minimum corpus frequency for a token to get its own id.
pub const DEFAULT_MIN_FREQ: usize = 5;
/// Default query truncation length, in tokens.
pub const DEFAULT_MAX_QUERY_LEN: usize = 30;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in id order (ids start at 2).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            ids: HashMap::new(),
        };
        vocab.ids.insert(PAD_TOKEN.to_string(), PAD_ID);
        vocab.ids.insert(UNK_TOKEN.to_string(), UNK_ID);
        for t in tokens {
            let t = t.into();
            if !vocab.ids.contains_key(&t) {
                vocab.ids.insert(t.clone(), vocab.tokens.len() as u32);
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode_query(&self, query: &str, max_len: usize) -> Result<Vec<u32>> {
        let ids: Vec<u32> = tokenize(query)
            .iter()
            .take(max_len)
            .map(|t| self.id(t).filter(|&id| id != PAD_ID).unwrap_or(UNK_ID))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyQuery(query.to_string()));
        }
        Ok(ids)
    }
}

/// Assigns ids, in first-occurrence order, to tokens seen at least
/// `min_freq` times across `queries`.
pub fn build_vocabulary<'a, I>(queries: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order = Vec::new();
    let mut any = false;
    for q in queries {
        any = true;
        for t in tokenize(q) {
            let c = counts.entry(t.clone()).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
    }
    if !any || order.is_empty() {
        return Err(Error::EmptyInput("vocabulary corpus has no tokens".into()));
    }
    Ok(Vocabulary::from_tokens(
        order.into_iter().filter(|t| counts[t] >= min_freq),
    ))
}
