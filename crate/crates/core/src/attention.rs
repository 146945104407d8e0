//! Query-conditioned dynamic filter and guided temporal attention.
//!
//! Both modalities are projected affinely into a shared space of width `d`.
//! The filter `θ = tanh(W_θ h_d + b_θ)` scores each projected feature row by
//! inner product; scores are divided by `√n` (the number of video features,
//! not `√d`) before the softmax. Attended features are the projected rows
//! scaled by their weights.

use crate::diffcore::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{join, leaf, uniform_matrix, Parameters};

/// Floor on `1 − a_i` inside the attention loss logarithm.
pub const ATTENTION_LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d × d_v`
    pub video_proj: Tensor,
    pub video_bias: Tensor,
    /// `d × d_s`
    pub sentence_proj: Tensor,
    pub sentence_bias: Tensor,
    /// `d × d`
    pub filter_weight: Tensor,
    pub filter_bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub video_proj: Var,
    pub video_bias: Var,
    pub sentence_proj: Var,
    pub sentence_bias: Var,
    pub filter_weight: Var,
    pub filter_bias: Var,
}

impl AttentionParams {
    pub fn zeros(d_v: usize, d_s: usize, d: usize) -> Self {
        AttentionParams {
            video_proj: Tensor::zeros(&[d, d_v]),
            video_bias: Tensor::zeros(&[d]),
            sentence_proj: Tensor::zeros(&[d, d_s]),
            sentence_bias: Tensor::zeros(&[d]),
            filter_weight: Tensor::zeros(&[d, d]),
            filter_bias: Tensor::zeros(&[d]),
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(d_v: usize, d_s: usize, d: usize, rng: &mut Rng) -> Self {
        let mut p = AttentionParams::zeros(d_v, d_s, d);
        p.video_proj = uniform_matrix(d, d_v, 1.0 / (d_v as f64).sqrt(), rng);
        p.sentence_proj = uniform_matrix(d, d_s, 1.0 / (d_s as f64).sqrt(), rng);
        p.filter_weight = uniform_matrix(d, d, 1.0 / (d as f64).sqrt(), rng);
        p
    }

    pub fn shared_dim(&self) -> usize {
        self.video_proj.rows()
    }
}

impl Parameters for AttentionParams {
    type Vars = AttentionVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "video_proj"), &self.video_proj);
        f(join(prefix, "video_bias"), &self.video_bias);
        f(join(prefix, "sentence_proj"), &self.sentence_proj);
        f(join(prefix, "sentence_bias"), &self.sentence_bias);
        f(join(prefix, "filter_weight"), &self.filter_weight);
        f(join(prefix, "filter_bias"), &self.filter_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "video_proj"), &mut self.video_proj);
        f(join(prefix, "video_bias"), &mut self.video_bias);
        f(join(prefix, "sentence_proj"), &mut self.sentence_proj);
        f(join(prefix, "sentence_bias"), &mut self.sentence_bias);
        f(join(prefix, "filter_weight"), &mut self.filter_weight);
        f(join(prefix, "filter_bias"), &mut self.filter_bias);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> AttentionVars {
        AttentionVars {
            video_proj: leaf(tape, leaves, &self.video_proj),
            video_bias: leaf(tape, leaves, &self.video_bias),
            sentence_proj: leaf(tape, leaves, &self.sentence_proj),
            sentence_bias: leaf(tape, leaves, &self.sentence_bias),
            filter_weight: leaf(tape, leaves, &self.filter_weight),
            filter_bias: leaf(tape, leaves, &self.filter_bias),
        }
    }
}

/// Projects video features `[n×d_v]` and the pooled query `[d_s]` to width `d`.
pub fn project(tape: &mut Tape, features: Var, query: Var, p: &AttentionVars) -> Result<(Var, Var)> {
    if tape.shape(features).len() != 2 {
        return Err(Error::Dimension(format!(
            "video features must be a matrix, got {:?}",
            tape.shape(features)
        )));
    }
    if tape.shape(query).len() != 1 {
        return Err(Error::Dimension(format!(
            "query representation must be a vector, got {:?}",
            tape.shape(query)
        )));
    }
    let g = tape.matmul_nt(features, p.video_proj)?;
    let g = tape.add_row_bias(g, p.video_bias)?;
    let h = tape.matmul_nt(query, p.sentence_proj)?;
    let h = tape.add_row_bias(h, p.sentence_bias)?;
    Ok((g, h))
}

/// `θ = tanh(W_θ·h_d + b_θ)`.
pub fn dynamic_filter(tape: &mut Tape, query: Var, p: &AttentionVars) -> Result<Var> {
    let pre = tape.matmul_nt(query, p.filter_weight)?;
    let pre = tape.add_row_bias(pre, p.filter_bias)?;
    Ok(tape.tanh(pre))
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// Pre-softmax scores `⟨G_d[i], θ⟩/√n`, `[n]`.
    pub scores: Var,
    /// Attention weights `A`, `[n]`, summing to one.
    pub weights: Var,
    /// `Ḡ[i] = a_i · G_d[i]`, `[n×d]`.
    pub attended: Var,
}

pub fn guided_attention(tape: &mut Tape, projected: Var, filter: Var) -> Result<AttentionOutput> {
    let n = match tape.shape(projected) {
        [n, _] => *n,
        s => {
            return Err(Error::Dimension(format!(
                "projected features must be a matrix, got {s:?}"
            )))
        }
    };
    let raw = tape.matmul_nt(filter, projected)?;
    let scores = tape.scale(raw, 1.0 / (n as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let attended = tape.scale_rows(projected, weights)?;
    Ok(AttentionOutput {
        scores,
        weights,
        attended,
    })
}

fn check_span(n: usize, tau_s: usize, tau_e: usize) -> Result<()> {
    if !(1 <= tau_s && tau_s <= tau_e && tau_e <= n) {
        return Err(Error::Range(format!(
            "span [{tau_s}, {tau_e}] is not within [1, {n}]"
        )));
    }
    Ok(())
}

/// Positions strictly outside the inclusive 1-based span get weight one.
fn outside_mask(n: usize, tau_s: usize, tau_e: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| if i < tau_s || i > tau_e { 1.0 } else { 0.0 })
        .collect()
}

/// `L_att = −Σ_{i ∉ [τ_s, τ_e]} log(max(1 − a_i, 1e-12))` on the tape.
pub fn attention_loss(tape: &mut Tape, weights: Var, tau_s: usize, tau_e: usize) -> Result<Var> {
    let n = match tape.shape(weights) {
        [n] => *n,
        s => return Err(Error::Dimension(format!("attention weights must be a vector, got {s:?}"))),
    };
    check_span(n, tau_s, tau_e)?;
    let mask = tape.constant(Tensor::vector(outside_mask(n, tau_s, tau_e))?);
    let complement = tape.affine(weights, -1.0, 1.0);
    let complement = tape.clamp_min(complement, ATTENTION_LOG_FLOOR);
    let logs = tape.log(complement)?;
    let outside = tape.mul(mask, logs)?;
    let total = tape.sum(outside);
    Ok(tape.neg(total))
}

/// Value-level attention loss over plain weights.
pub fn attention_loss_value(weights: &[f64], tau_s: usize, tau_e: usize) -> Result<f64> {
    check_span(weights.len(), tau_s, tau_e)?;
    Ok(weights
        .iter()
        .zip(outside_mask(weights.len(), tau_s, tau_e))
        .filter(|(_, m)| *m > 0.0)
        .map(|(a, _)| -(1.0 - a).max(ATTENTION_LOG_FLOOR).ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bound(p: &AttentionParams, tape: &mut Tape) -> AttentionVars {
        p.bind(tape, &mut Vec::new())
    }

    #[test]
    fn zero_params_project_to_zero() {
        let p = AttentionParams::zeros(3, 4, 2);
        let mut tape = Tape::new();
        let v = bound(&p, &mut tape);
        let g = tape.constant(Tensor::filled(&[5, 3], 1.5));
        let h = tape.constant(Tensor::filled(&[4], -2.0));
        let (gd, hd) = project(&mut tape, g, h, &v).unwrap();
        assert!(tape.value(gd).data().iter().all(|&x| x == 0.0));
        assert!(tape.value(hd).data().iter().all(|&x| x == 0.0));
        let theta = dynamic_filter(&mut tape, hd, &v).unwrap();
        assert!(tape.value(theta).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_projection_keeps_features() {
        let mut p = AttentionParams::zeros(3, 2, 3);
        p.video_proj = Tensor::identity(3);
        let mut tape = Tape::new();
        let v = bound(&p, &mut tape);
        let data = vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5];
        let g = tape.constant(Tensor::matrix(2, 3, data.clone()).unwrap());
        let h = tape.constant(Tensor::zeros(&[2]));
        let (gd, _) = project(&mut tape, g, h, &v).unwrap();
        assert_eq!(tape.value(gd).data(), data.as_slice());
    }

    #[test]
    fn projection_dimension_mismatch() {
        let p = AttentionParams::zeros(3, 4, 2);
        let mut tape = Tape::new();
        let v = bound(&p, &mut tape);
        let g = tape.constant(Tensor::zeros(&[5, 2]));
        let h = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(project(&mut tape, g, h, &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn large_bias_saturates_filter() {
        let mut p = AttentionParams::zeros(1, 1, 3);
        p.filter_bias = Tensor::filled(&[3], 40.0);
        let mut tape = Tape::new();
        let v = bound(&p, &mut tape);
        let h = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9]).unwrap());
        let theta = dynamic_filter(&mut tape, h, &v).unwrap();
        assert!(tape.value(theta).data().iter().all(|&x| x > 1.0 - 1e-12 && x <= 1.0));
    }

    #[test]
    fn distinct_queries_give_distinct_filters() {
        let mut rng = Rng::new(11);
        let p = AttentionParams::init(2, 2, 4, &mut rng);
        let mut tape = Tape::new();
        let v = bound(&p, &mut tape);
        let a = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3, -0.4]).unwrap());
        let ta = dynamic_filter(&mut tape, a, &v).unwrap();
        let tb = dynamic_filter(&mut tape, b, &v).unwrap();
        assert_ne!(tape.value(ta), tape.value(tb));
    }

    #[test]
    fn identical_rows_or_zero_filter_give_uniform_attention() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::filled(&[4, 3], 0.7));
        let theta = tape.constant(Tensor::vector(vec![0.5, -0.1, 0.9]).unwrap());
        let out = guided_attention(&mut tape, g, theta).unwrap();
        for &a in tape.value(out.weights).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        let g2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 4.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[2]));
        let out = guided_attention(&mut tape, g2, zero).unwrap();
        assert_eq!(tape.value(out.weights).data(), &[0.5, 0.5]);
    }

    #[test]
    fn hand_softmax_example() {
        // n = 2, so scores are raw/√2; choose raw so scores = [0, ln 3].
        let s = 3f64.ln() * 2f64.sqrt();
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::matrix(2, 1, vec![0.0, s]).unwrap());
        let theta = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        let out = guided_attention(&mut tape, g, theta).unwrap();
        let a = tape.value(out.weights).data();
        assert!((a[0] - 0.25).abs() < 1e-12 && (a[1] - 0.75).abs() < 1e-12);
        let gbar = tape.value(out.attended).data();
        assert_eq!(gbar[0], 0.0);
        assert!((gbar[1] - 0.75 * s).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_examples() {
        let l = attention_loss_value(&[0.5, 0.5, 0.0, 0.0], 3, 4).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(attention_loss_value(&[0.0, 0.6, 0.4, 0.0], 2, 3).unwrap(), 0.0);
        assert_eq!(attention_loss_value(&[0.9, 0.05, 0.05], 1, 3).unwrap(), 0.0);
        assert!(matches!(attention_loss_value(&[0.5, 0.5], 2, 1), Err(Error::Range(_))));
        assert!(matches!(attention_loss_value(&[0.5, 0.5], 1, 3), Err(Error::Range(_))));
        // saturated mass outside the span stays finite under the floor
        let l = attention_loss_value(&[1.0, 0.0], 2, 2).unwrap();
        assert!((l - (-ATTENTION_LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn tape_and_value_losses_agree() {
        let w = vec![0.1, 0.4, 0.3, 0.2];
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(w.clone()).unwrap());
        let l = attention_loss(&mut tape, a, 2, 3).unwrap();
        assert!((tape.value(l).item() - attention_loss_value(&w, 2, 3).unwrap()).abs() < 1e-15);
    }
}
