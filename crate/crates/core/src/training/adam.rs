use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::Parameters;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(vec![0.0; t.len()]));
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }

    /// One Adam update with coupled L2 decay (`g ← g + λ·w`). Fails without
    /// touching anything if a gradient is not finite.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if grads.len() != names.len() || self.m.len() != names.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} moment slots",
                names.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (name, g) in names.iter().zip(grads) {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient {} in `{name}` at index {i}",
                    g.data()[i]
                )));
            }
        }

        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, w| {
            let (m, v, g) = (&mut ms[k], &mut vs[k], grads[k].data());
            for (j, wj) in w.data_mut().iter_mut().enumerate() {
                let gj = g[j] + weight_decay * *wj;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *wj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            k += 1;
        });
        Ok(())
    }
}
