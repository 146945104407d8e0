//! Span prediction head, soft labels, and the span losses.
//!
//! Attended features pass through two stacked BiGRUs with dropout between
//! them. Two linear heads score every position; a softmax over positions
//! gives the start and end distributions. Training targets are Gaussians
//! quantized to the integer positions `1..=n`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax_values, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gru::{bigru_forward, BiGruParams, BiGruVars};
use crate::params::{join, leaf, uniform_matrix, Parameters};

/// Floor applied to probabilities before taking their logarithm in losses.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationParams {
    pub layer1: BiGruParams,
    pub layer2: BiGruParams,
    /// `1 × 2u`
    pub start_head: Tensor,
    pub start_bias: Tensor,
    pub end_head: Tensor,
    pub end_bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LocalizationVars {
    pub layer1: BiGruVars,
    pub layer2: BiGruVars,
    pub start_head: Var,
    pub start_bias: Var,
    pub end_head: Var,
    pub end_bias: Var,
}

impl LocalizationParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LocalizationParams {
            layer1: BiGruParams::zeros(input, hidden),
            layer2: BiGruParams::zeros(2 * hidden, hidden),
            start_head: Tensor::zeros(&[1, 2 * hidden]),
            start_bias: Tensor::zeros(&[1]),
            end_head: Tensor::zeros(&[1, 2 * hidden]),
            end_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / ((2 * hidden) as f64).sqrt();
        LocalizationParams {
            layer1: BiGruParams::init(input, hidden, rng),
            layer2: BiGruParams::init(2 * hidden, hidden, rng),
            start_head: uniform_matrix(1, 2 * hidden, k, rng),
            start_bias: Tensor::zeros(&[1]),
            end_head: uniform_matrix(1, 2 * hidden, k, rng),
            end_bias: Tensor::zeros(&[1]),
        }
    }
}

impl Parameters for LocalizationParams {
    type Vars = LocalizationVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.layer1.visit(&join(prefix, "layer1"), f);
        self.layer2.visit(&join(prefix, "layer2"), f);
        f(join(prefix, "start_head"), &self.start_head);
        f(join(prefix, "start_bias"), &self.start_bias);
        f(join(prefix, "end_head"), &self.end_head);
        f(join(prefix, "end_bias"), &self.end_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.layer1.visit_mut(&join(prefix, "layer1"), f);
        self.layer2.visit_mut(&join(prefix, "layer2"), f);
        f(join(prefix, "start_head"), &mut self.start_head);
        f(join(prefix, "start_bias"), &mut self.start_bias);
        f(join(prefix, "end_head"), &mut self.end_head);
        f(join(prefix, "end_bias"), &mut self.end_bias);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> LocalizationVars {
        LocalizationVars {
            layer1: self.layer1.bind(tape, leaves),
            layer2: self.layer2.bind(tape, leaves),
            start_head: leaf(tape, leaves, &self.start_head),
            start_bias: leaf(tape, leaves, &self.start_bias),
            end_head: leaf(tape, leaves, &self.end_head),
            end_bias: leaf(tape, leaves, &self.end_bias),
        }
    }
}

/// Tape handles for the two predicted distributions.
#[derive(Clone, Copy, Debug)]
pub struct SpanOutput {
    pub start_log: Var,
    pub end_log: Var,
    pub start: Var,
    pub end: Var,
}

impl SpanOutput {
    pub fn distributions(&self, tape: &Tape) -> SpanDistributions {
        SpanDistributions {
            start: tape.value(self.start).data().to_vec(),
            end: tape.value(self.end).data().to_vec(),
        }
    }
}

fn head_scores(tape: &mut Tape, states: Var, head: Var, bias: Var, n: usize) -> Result<Var> {
    let s = tape.matmul_nt(states, head)?;
    let s = tape.add_row_bias(s, bias)?;
    tape.reshape(s, &[n])
}

/// BiGRU → dropout → BiGRU → per-position start/end softmax.
pub fn localize(
    tape: &mut Tape,
    attended: Var,
    p: &LocalizationVars,
    dropout: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<SpanOutput> {
    let n = match tape.shape(attended) {
        [n, _] => *n,
        s => {
            return Err(Error::Dimension(format!(
                "attended features must be a matrix, got {s:?}"
            )))
        }
    };
    let h1 = bigru_forward(tape, attended, &p.layer1)?;
    let h1 = tape.dropout(h1, dropout, rng, training)?;
    let h2 = bigru_forward(tape, h1, &p.layer2)?;
    let start_scores = head_scores(tape, h2, p.start_head, p.start_bias, n)?;
    let end_scores = head_scores(tape, h2, p.end_head, p.end_bias, n)?;
    let start_log = tape.log_softmax(start_scores)?;
    let end_log = tape.log_softmax(end_scores)?;
    let start = tape.exp(start_log);
    let end = tape.exp(end_log);
    Ok(SpanOutput {
        start_log,
        end_log,
        start,
        end,
    })
}

/// Predicted categorical distributions over positions `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistributions {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanDistributions {
    pub fn from_scores(start: &[f64], end: &[f64]) -> Self {
        SpanDistributions {
            start: softmax_values(start),
            end: softmax_values(end),
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// `p_i ∝ exp(−(i − μ)² / 2σ²)` for `i = 1..=n`, normalized.
pub fn quantized_gaussian(mu: f64, sigma: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyInput("quantized Gaussian over zero positions".into()));
    }
    if !(mu >= 1.0 && mu <= n as f64) {
        return Err(Error::Range(format!("centre {mu} outside [1, {n}]")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("standard deviation {sigma} must be positive")));
    }
    // Work in log space relative to the closest position so tiny σ cannot
    // underflow the whole vector.
    let logits: Vec<f64> = (1..=n)
        .map(|i| {
            let d = i as f64 - mu;
            -(d * d) / (2.0 * sigma * sigma)
        })
        .collect();
    Ok(softmax_values(&logits))
}

/// Quantized-Gaussian targets around the ground-truth indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabels {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub sigma: f64,
}

impl SoftLabels {
    pub fn new(tau_s: usize, tau_e: usize, sigma: f64, n: usize) -> Result<Self> {
        Ok(SoftLabels {
            start: quantized_gaussian(tau_s as f64, sigma, n)?,
            end: quantized_gaussian(tau_e as f64, sigma, n)?,
            sigma,
        })
    }
}

/// Which argument order the KL span loss uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `D_KL(predicted ‖ target)`
    #[default]
    PredTarget,
    /// `D_KL(target ‖ predicted)`
    TargetPred,
}

/// `Σ p_i log(p_i / q_i)` with `0·log 0 = 0` and `q` floored at 1e-12.
/// Rounding residue below zero is clamped away.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "KL divergence between lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0))
}

pub fn kl_loss(pred: &SpanDistributions, target: &SoftLabels, direction: KlDirection) -> Result<f64> {
    let pair = |p: &[f64], q: &[f64]| match direction {
        KlDirection::PredTarget => kl_divergence(p, q),
        KlDirection::TargetPred => kl_divergence(q, p),
    };
    Ok(pair(&pred.start, &target.start)? + pair(&pred.end, &target.end)?)
}

fn check_index(n: usize, tau: usize) -> Result<()> {
    if tau < 1 || tau > n {
        return Err(Error::Range(format!("index {tau} outside [1, {n}]")));
    }
    Ok(())
}

/// `−log p̂_s[τ_s] − log p̂_e[τ_e]`, probabilities floored at 1e-12.
pub fn nll_loss(pred: &SpanDistributions, tau_s: usize, tau_e: usize) -> Result<f64> {
    let n = pred.len();
    check_index(n, tau_s)?;
    check_index(n, tau_e)?;
    Ok(-pred.start[tau_s - 1].max(PROB_FLOOR).ln() - pred.end[tau_e - 1].max(PROB_FLOOR).ln())
}

pub fn total_loss(main: f64, attention: f64, use_attention: bool) -> f64 {
    if use_attention {
        main + attention
    } else {
        main
    }
}

/// Independent argmax of each distribution, as 1-based indices. Ties go to
/// the smallest index; an end before the start is returned unchanged.
pub fn predict_span(pred: &SpanDistributions) -> (usize, usize) {
    (argmax(&pred.start) + 1, argmax(&pred.end) + 1)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_len(tape: &Tape, v: Var, n: usize) -> Result<()> {
    if tape.shape(v) != [n] {
        return Err(Error::Dimension(format!(
            "distribution of shape {:?} against {n} targets",
            tape.shape(v)
        )));
    }
    Ok(())
}

fn kl_term(tape: &mut Tape, log_pred: Var, pred: Var, target: &[f64], direction: KlDirection) -> Result<Var> {
    check_len(tape, log_pred, target.len())?;
    let log_q: Vec<f64> = target.iter().map(|q| q.max(PROB_FLOOR).ln()).collect();
    match direction {
        KlDirection::PredTarget => {
            // Σ p̂ (log p̂ − log q); p̂ = exp(log p̂) so 0·log 0 never arises.
            let log_q = tape.constant(Tensor::vector(log_q)?);
            let diff = tape.sub(log_pred, log_q)?;
            let prod = tape.mul(pred, diff)?;
            Ok(tape.sum(prod))
        }
        KlDirection::TargetPred => {
            // Σ q (log q − log p̂)
            let entropy_part: f64 = target
                .iter()
                .zip(&log_q)
                .filter(|(q, _)| **q > 0.0)
                .map(|(q, lq)| q * lq)
                .sum();
            let q = tape.constant(Tensor::vector(target.to_vec())?);
            let cross = tape.mul(q, log_pred)?;
            let cross = tape.sum(cross);
            Ok(tape.affine(cross, -1.0, entropy_part))
        }
    }
}

/// KL span loss on the tape.
pub fn kl_loss_on_tape(tape: &mut Tape, out: &SpanOutput, target: &SoftLabels, direction: KlDirection) -> Result<Var> {
    let s = kl_term(tape, out.start_log, out.start, &target.start, direction)?;
    let e = kl_term(tape, out.end_log, out.end, &target.end, direction)?;
    tape.add(s, e)
}

/// NLL span loss on the tape.
pub fn nll_loss_on_tape(tape: &mut Tape, out: &SpanOutput, tau_s: usize, tau_e: usize) -> Result<Var> {
    let n = tape.value(out.start_log).len();
    check_index(n, tau_s)?;
    check_index(n, tau_e)?;
    let floor = PROB_FLOOR.ln();
    let ls = tape.pick(out.start_log, tau_s - 1)?;
    let ls = tape.clamp_min(ls, floor);
    let le = tape.pick(out.end_log, tau_e - 1)?;
    let le = tape.clamp_min(le, floor);
    let both = tape.add(ls, le)?;
    Ok(tape.neg(both))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_uniform_distributions() {
        let p = LocalizationParams::zeros(3, 2);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape, &mut Vec::new());
        let g = tape.constant(Tensor::filled(&[5, 3], 0.3));
        let out = localize(&mut tape, g, &v, 0.5, &mut Rng::new(0), true).unwrap();
        let d = out.distributions(&tape);
        for x in d.start.iter().chain(&d.end) {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_position_is_certain() {
        let mut rng = Rng::new(1);
        let p = LocalizationParams::init(3, 2, &mut rng);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape, &mut Vec::new());
        let g = tape.constant(Tensor::filled(&[1, 3], 0.3));
        let out = localize(&mut tape, g, &v, 0.5, &mut rng, false).unwrap();
        let d = out.distributions(&tape);
        assert_eq!(d.start, vec![1.0]);
        assert_eq!(d.end, vec![1.0]);
    }

    #[test]
    fn quantized_gaussian_hand_values() {
        let p = quantized_gaussian(3.0, 1.0, 5).unwrap();
        let expected = [0.0545, 0.2442, 0.4026, 0.2442, 0.0545];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 5e-4, "{p:?}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], p[4]);
        assert_eq!(p[1], p[3]);
    }

    #[test]
    fn quantized_gaussian_narrow_limit() {
        let p = quantized_gaussian(4.0, 1e-3, 9).unwrap();
        assert!((p[3] - 1.0).abs() < 1e-12);
        assert!(matches!(quantized_gaussian(0.5, 1.0, 9), Err(Error::Range(_))));
        assert!(matches!(quantized_gaussian(10.0, 1.0, 9), Err(Error::Range(_))));
        assert!(matches!(quantized_gaussian(2.0, 0.0, 9), Err(Error::Parameter(_))));
    }

    #[test]
    fn kl_examples() {
        let p = vec![0.5, 0.5];
        let q = vec![0.75, 0.25];
        let one = kl_divergence(&p, &q).unwrap();
        assert!((one - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((one - 0.1438).abs() < 1e-4);
        let pred = SpanDistributions { start: p.clone(), end: p };
        let target = SoftLabels { start: q.clone(), end: q, sigma: 1.0 };
        assert!((kl_loss(&pred, &target, KlDirection::PredTarget).unwrap() - 2.0 * one).abs() < 1e-15);
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(matches!(kl_divergence(&[1.0], &[0.5, 0.5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn nll_examples() {
        let pred = SpanDistributions {
            start: vec![0.0, 1.0, 0.0],
            end: vec![0.0, 0.0, 1.0],
        };
        assert_eq!(nll_loss(&pred, 2, 3).unwrap(), 0.0);
        let pred = SpanDistributions {
            start: vec![0.5, 0.5, 0.0, 0.0],
            end: vec![0.25, 0.25, 0.25, 0.25],
        };
        assert!((nll_loss(&pred, 1, 4).unwrap() - 2.0794).abs() < 1e-4);
        let uniform = SpanDistributions {
            start: vec![1.0 / 64.0; 64],
            end: vec![1.0 / 64.0; 64],
        };
        assert!((nll_loss(&uniform, 10, 20).unwrap() - 8.3178).abs() < 1e-4);
        assert!(matches!(nll_loss(&uniform, 0, 20), Err(Error::Range(_))));
        assert!(matches!(nll_loss(&uniform, 1, 65), Err(Error::Range(_))));
    }

    #[test]
    fn total_loss_switch() {
        assert_eq!(total_loss(1.0, 0.5, true), 1.5);
        assert_eq!(total_loss(1.0, 0.5, false), 1.0);
        assert_eq!(total_loss(1.0, 0.0, true), 1.0);
    }

    #[test]
    fn argmax_rules() {
        let d = SpanDistributions {
            start: vec![0.1, 0.8, 0.1],
            end: vec![0.1, 0.1, 0.8],
        };
        assert_eq!(predict_span(&d), (2, 3));
        let u = SpanDistributions {
            start: vec![0.25; 4],
            end: vec![0.25; 4],
        };
        assert_eq!(predict_span(&u), (1, 1));
        let inverted = SpanDistributions {
            start: vec![0.0, 0.1, 0.9],
            end: vec![0.9, 0.1, 0.0],
        };
        assert_eq!(predict_span(&inverted), (3, 1));
    }

    #[test]
    fn tape_losses_match_value_losses() {
        let mut rng = Rng::new(7);
        let n = 6;
        let s: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let target = SoftLabels::new(2, 5, 1.0, n).unwrap();
        let pred = SpanDistributions::from_scores(&s, &e);

        let mut tape = Tape::new();
        let sv = tape.constant(Tensor::vector(s).unwrap());
        let ev = tape.constant(Tensor::vector(e).unwrap());
        let start_log = tape.log_softmax(sv).unwrap();
        let end_log = tape.log_softmax(ev).unwrap();
        let start = tape.exp(start_log);
        let end = tape.exp(end_log);
        let out = SpanOutput { start_log, end_log, start, end };
        for dir in [KlDirection::PredTarget, KlDirection::TargetPred] {
            let l = kl_loss_on_tape(&mut tape, &out, &target, dir).unwrap();
            assert!((tape.value(l).item() - kl_loss(&pred, &target, dir).unwrap()).abs() < 1e-12);
        }
        let l = nll_loss_on_tape(&mut tape, &out, 2, 5).unwrap();
        assert!((tape.value(l).item() - nll_loss(&pred, 2, 5).unwrap()).abs() < 1e-12);
    }
}
