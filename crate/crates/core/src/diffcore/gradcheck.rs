use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`; infinite if
    /// either estimate was NaN.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Checks the gradient of a scalar composite `f` at `inputs`.
///
/// `f` receives a fresh tape and one trainable leaf per input and must
/// return a one-element loss node.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_leaves(
        |tape, inputs| {
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let loss = f(tape, &vars)?;
            Ok((loss, vars))
        },
        inputs,
        h,
    )
}

/// Like [`grad_check`], but `f` records its own leaves for `inputs` and
/// returns them, in input order, alongside the loss. Useful when leaves are
/// created by a parameter binder.
pub fn grad_check_leaves<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<(Var, Vec<Var>)>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = f(&mut tape, inputs)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let (loss, vars) = f(&mut tape, inputs)?;
    if vars.len() != inputs.len() {
        return Err(Error::Contract(format!(
            "{} leaves returned for {} inputs",
            vars.len(),
            inputs.len()
        )));
    }
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::Contract(format!("input {k} is not a trainable leaf")))?
            .data()
            .to_vec();
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[j];
            let err = if a.is_nan() || numeric.is_nan() {
                f64::INFINITY
            } else {
                (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs())
            };
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((k, j));
            }
        }
    }
    Ok(report)
}
