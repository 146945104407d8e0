use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHAS: [f64; 3] = [0.3, 0.5, 0.7];

/// How inverted predicted intervals (`t_s > t_e`) are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertedPolicy {
    /// Swap the endpoints, then score normally.
    #[default]
    Swap,
    /// Score inverted predictions as zero overlap.
    StrictInvertedZero,
}

/// Temporal IoU of a predicted interval against a well-ordered reference.
/// Inverted predictions are swapped first.
pub fn tiou(pred: (f64, f64), truth: (f64, f64)) -> f64 {
    tiou_with(pred, truth, InvertedPolicy::Swap)
}

pub fn tiou_with(pred: (f64, f64), truth: (f64, f64), policy: InvertedPolicy) -> f64 {
    let (mut a0, mut a1) = pred;
    if a0 > a1 {
        match policy {
            InvertedPolicy::Swap => std::mem::swap(&mut a0, &mut a1),
            InvertedPolicy::StrictInvertedZero => return 0.0,
        }
    }
    let (b0, b1) = truth;
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = (a1 - a0) + (b1 - b0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of `tious` at or above `alpha`.
pub fn accuracy_at(tious: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Range(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if tious.is_empty() {
        return Err(Error::EmptyInput("no records to score".into()));
    }
    Ok(tious.iter().filter(|&&t| t >= alpha).count() as f64 / tious.len() as f64)
}

pub fn mean_tiou(tious: &[f64]) -> Result<f64> {
    if tious.is_empty() {
        return Err(Error::EmptyInput("no records to score".into()));
    }
    Ok(tious.iter().sum::<f64>() / tious.len() as f64)
}

/// Accuracy per threshold plus mean tIoU over one prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by the threshold's shortest decimal form, e.g. `"0.5"`.
    pub accuracy: BTreeMap<String, f64>,
    pub miou: f64,
    pub count: usize,
}

pub fn alpha_key(alpha: f64) -> String {
    format!("{alpha}")
}

impl EvalReport {
    pub fn from_tious(tious: &[f64], alphas: &[f64]) -> Result<Self> {
        let mut accuracy = BTreeMap::new();
        for &a in alphas {
            accuracy.insert(alpha_key(a), accuracy_at(tious, a)?);
        }
        Ok(EvalReport {
            accuracy,
            miou: mean_tiou(tious)?,
            count: tious.len(),
        })
    }

    pub fn accuracy_at(&self, alpha: f64) -> Option<f64> {
        self.accuracy.get(&alpha_key(alpha)).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Aligned two-column table with accuracies in percent.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = self
            .accuracy
            .iter()
            .map(|(k, v)| (format!("R@1 tIoU>={k}"), format!("{:.2}", 100.0 * v)))
            .collect();
        rows.push(("mIoU".into(), format!("{:.2}", 100.0 * self.miou)));
        rows.push(("count".into(), self.count.to_string()));
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let v = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, val) in rows {
            writeln!(out, "{k:<w$}  {val:>v$}").unwrap();
        }
        out
    }
}
