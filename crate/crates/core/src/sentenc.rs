//! Query encoder: frozen word embeddings, a bidirectional GRU, and mean
//! pooling over the concatenated per-token states.

use crate::dataio::EmbeddingTable;
use crate::diffcore::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gru::{bigru_forward, BiGruParams, BiGruVars};
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEncoderParams {
    pub cells: BiGruParams,
}

impl SentenceEncoderParams {
    pub fn init(embed_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        SentenceEncoderParams {
            cells: BiGruParams::init(embed_dim, hidden, rng),
        }
    }

    pub fn zeros(embed_dim: usize, hidden: usize) -> Self {
        SentenceEncoderParams {
            cells: BiGruParams::zeros(embed_dim, hidden),
        }
    }

    /// Width of the pooled representation, `2·hidden`.
    pub fn output_size(&self) -> usize {
        self.cells.output_size()
    }
}

impl Parameters for SentenceEncoderParams {
    type Vars = BiGruVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.cells.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.cells.visit_mut(prefix, f);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> BiGruVars {
        self.cells.bind(tape, leaves)
    }
}

/// Embeds `token_ids` as a constant (the table is never trained), runs the
/// BiGRU and averages its rows into `h̄ ∈ ℝ^{2u}`.
pub fn encode_sentence(tape: &mut Tape, token_ids: &[u32], table: &EmbeddingTable, p: &BiGruVars) -> Result<Var> {
    if token_ids.is_empty() {
        return Err(Error::EmptyQuery(String::new()));
    }
    let x = tape.constant(table.lookup(token_ids)?);
    encode_embedded(tape, x, p)
}

/// [`encode_sentence`] on already embedded tokens `[m×embed_dim]`.
pub fn encode_embedded(tape: &mut Tape, embedded: Var, p: &BiGruVars) -> Result<Var> {
    let states = bigru_forward(tape, embedded, p)?;
    tape.mean_rows(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Op;

    fn table(rng: &mut Rng, vocab: usize, dim: usize) -> EmbeddingTable {
        let data = (0..vocab * dim).map(|_| rng.normal()).collect();
        EmbeddingTable::from_rows(Tensor::matrix(vocab, dim, data).unwrap()).unwrap()
    }

    #[test]
    fn single_token_equals_its_bigru_row() {
        let mut rng = Rng::new(1);
        let e = table(&mut rng, 5, 4);
        let p = SentenceEncoderParams::init(4, 3, &mut rng);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, &mut Vec::new());
        let h = encode_sentence(&mut tape, &[3], &e, &vars).unwrap();
        let x = tape.constant(e.lookup(&[3]).unwrap());
        let row = bigru_forward(&mut tape, x, &vars).unwrap();
        assert_eq!(tape.value(h).data(), tape.value(row).data());
        assert_eq!(tape.shape(h), &[6]);
    }

    #[test]
    fn zero_params_pool_to_zero() {
        let mut rng = Rng::new(2);
        let e = table(&mut rng, 5, 4);
        let p = SentenceEncoderParams::zeros(4, 3);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, &mut Vec::new());
        let h = encode_sentence(&mut tape, &[2, 3, 4], &e, &vars).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_query_is_rejected() {
        let mut rng = Rng::new(3);
        let e = table(&mut rng, 3, 2);
        let p = SentenceEncoderParams::zeros(2, 2);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, &mut Vec::new());
        assert!(matches!(encode_sentence(&mut tape, &[], &e, &vars), Err(Error::EmptyQuery(_))));
    }

    #[test]
    fn order_aware_and_bounded() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let e = table(&mut rng, 6, 4);
            let p = SentenceEncoderParams::init(4, 3, &mut rng);
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape, &mut Vec::new());
            let a = encode_sentence(&mut tape, &[2, 3, 5], &e, &vars).unwrap();
            let b = encode_sentence(&mut tape, &[5, 3, 2], &e, &vars).unwrap();
            let diff = tape
                .value(a)
                .data()
                .iter()
                .zip(tape.value(b).data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff > 1e-9);
            assert!(tape.value(a).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn embeddings_receive_no_gradient() {
        let mut rng = Rng::new(5);
        let e = table(&mut rng, 4, 3);
        let p = SentenceEncoderParams::init(3, 2, &mut rng);
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        let vars = p.bind(&mut tape, &mut leaves);
        let h = encode_sentence(&mut tape, &[1, 2, 3], &e, &vars).unwrap();
        let loss = tape.sum(h);
        let grads = tape.backward(loss).unwrap();
        let trainable = tape
            .nodes()
            .iter()
            .filter(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
            .count();
        assert_eq!(trainable, leaves.len());
        assert!(leaves.iter().all(|&v| grads.get(v).is_some()));
    }
}
