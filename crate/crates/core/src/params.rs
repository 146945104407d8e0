//! Named parameter traversal and binding onto a tape.

use crate::diffcore::{Rng, Tape, Tensor, Var};

/// A group of trainable tensors with a fixed traversal order.
///
/// `bind` must push one tape leaf per tensor in the same order that
/// `visit` and `visit_mut` traverse them.
pub trait Parameters {
    type Vars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> Self::Vars;

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Copies of every tensor in traversal order.
    fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    /// Overwrites every tensor, in traversal order, from `values`.
    fn load_tensors(&mut self, values: &[Tensor]) -> crate::Result<()> {
        let mut k = 0;
        let mut bad = None;
        self.visit_mut("", &mut |name, t| {
            match values.get(k) {
                Some(v) if v.shape() == t.shape() => *t = v.clone(),
                other => {
                    bad.get_or_insert(format!(
                        "`{name}` has shape {:?}, got {:?}",
                        t.shape(),
                        other.map(Tensor::shape)
                    ));
                }
            }
            k += 1;
        });
        match bad {
            Some(msg) => Err(crate::Error::Dimension(msg)),
            None if k != values.len() => Err(crate::Error::Dimension(format!(
                "{} tensors for {k} parameters",
                values.len()
            ))),
            None => Ok(()),
        }
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn leaf(tape: &mut Tape, leaves: &mut Vec<Var>, t: &Tensor) -> Var {
    let v = tape.param(t.clone());
    leaves.push(v);
    v
}

/// Uniform(-k, k) matrix.
pub(crate) fn uniform_matrix(rows: usize, cols: usize, k: f64, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-k, k)).collect())
        .expect("positive dimensions")
}
