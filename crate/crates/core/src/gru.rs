//! Gated recurrent units.
//!
//! Gate convention (update gate carries the old state):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h̃ + z ⊙ h
//! ```

use crate::diffcore::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{join, leaf, uniform_matrix, Parameters};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GruCellVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl GruCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCellParams {
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, input]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    /// Matrices uniform in `±1/√hidden`, biases zero.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut p = GruCellParams::zeros(input, hidden);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            *m = uniform_matrix(hidden, input, k, rng);
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            *m = uniform_matrix(hidden, hidden, k, rng);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.rows()
    }
}

impl Parameters for GruCellParams {
    type Vars = GruCellVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_z"), &self.w_z);
        f(join(prefix, "w_r"), &self.w_r);
        f(join(prefix, "w_h"), &self.w_h);
        f(join(prefix, "u_z"), &self.u_z);
        f(join(prefix, "u_r"), &self.u_r);
        f(join(prefix, "u_h"), &self.u_h);
        f(join(prefix, "b_z"), &self.b_z);
        f(join(prefix, "b_r"), &self.b_r);
        f(join(prefix, "b_h"), &self.b_h);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_z"), &mut self.w_z);
        f(join(prefix, "w_r"), &mut self.w_r);
        f(join(prefix, "w_h"), &mut self.w_h);
        f(join(prefix, "u_z"), &mut self.u_z);
        f(join(prefix, "u_r"), &mut self.u_r);
        f(join(prefix, "u_h"), &mut self.u_h);
        f(join(prefix, "b_z"), &mut self.b_z);
        f(join(prefix, "b_r"), &mut self.b_r);
        f(join(prefix, "b_h"), &mut self.b_h);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> GruCellVars {
        GruCellVars {
            w_z: leaf(tape, leaves, &self.w_z),
            w_r: leaf(tape, leaves, &self.w_r),
            w_h: leaf(tape, leaves, &self.w_h),
            u_z: leaf(tape, leaves, &self.u_z),
            u_r: leaf(tape, leaves, &self.u_r),
            u_h: leaf(tape, leaves, &self.u_h),
            b_z: leaf(tape, leaves, &self.b_z),
            b_r: leaf(tape, leaves, &self.b_r),
            b_h: leaf(tape, leaves, &self.b_h),
        }
    }
}

fn check_step_shapes(tape: &Tape, x: Var, h: Var, p: &GruCellVars) -> Result<()> {
    let (hidden, input) = match tape.shape(p.w_z) {
        [r, c] => (*r, *c),
        s => return Err(Error::Dimension(format!("GRU weight shape {s:?}"))),
    };
    if tape.shape(x) != [input] || tape.shape(h) != [hidden] {
        return Err(Error::Dimension(format!(
            "GRU step expects x [{input}] and h [{hidden}], got {:?} and {:?}",
            tape.shape(x),
            tape.shape(h)
        )));
    }
    Ok(())
}

/// One recurrence step on vectors `x` and `h`.
pub fn gru_cell_step(tape: &mut Tape, x: Var, h: Var, p: &GruCellVars) -> Result<Var> {
    check_step_shapes(tape, x, h, p)?;
    let xz = affine(tape, x, p.w_z, p.b_z)?;
    let xr = affine(tape, x, p.w_r, p.b_r)?;
    let xh = affine(tape, x, p.w_h, p.b_h)?;
    step_from_inputs(tape, xz, xr, xh, h, p)
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_nt(x, w)?;
    tape.add_row_bias(y, b)
}

/// Recurrence given the precomputed input contributions `W·x + b` per gate.
fn step_from_inputs(tape: &mut Tape, xz: Var, xr: Var, xh: Var, h: Var, p: &GruCellVars) -> Result<Var> {
    let hz = tape.matmul_nt(h, p.u_z)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);

    let hr = tape.matmul_nt(h, p.u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);

    let rh = tape.mul(r, h)?;
    let hh = tape.matmul_nt(rh, p.u_h)?;
    let cand = tape.add(xh, hh)?;
    let cand = tape.tanh(cand);

    // h' = h̃ + z ⊙ (h − h̃)
    let diff = tape.sub(h, cand)?;
    let carry = tape.mul(z, diff)?;
    tape.add(cand, carry)
}

/// Runs a cell over the rows of `xs` (`[m×input]`) from a zero state and
/// returns the `m` hidden states in input order. `reverse` consumes the
/// rows last-to-first; row `j` of the output is still the state at `x_j`.
pub fn gru_sequence(tape: &mut Tape, xs: Var, p: &GruCellVars, reverse: bool) -> Result<Vec<Var>> {
    let m = match tape.shape(xs) {
        [m, _] => *m,
        s => return Err(Error::Dimension(format!("GRU input must be a matrix, got {s:?}"))),
    };
    let hidden = tape.shape(p.u_z)[0];
    let xz = affine(tape, xs, p.w_z, p.b_z)?;
    let xr = affine(tape, xs, p.w_r, p.b_r)?;
    let xh = affine(tape, xs, p.w_h, p.b_h)?;

    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut states = vec![h; m];
    let order: Vec<usize> = if reverse { (0..m).rev().collect() } else { (0..m).collect() };
    for t in order {
        let (rz, rr, rh) = (tape.row(xz, t)?, tape.row(xr, t)?, tape.row(xh, t)?);
        h = step_from_inputs(tape, rz, rr, rh, h, p)?;
        states[t] = h;
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGruParams {
    pub forward: GruCellParams,
    pub backward: GruCellParams,
}

#[derive(Clone, Copy, Debug)]
pub struct BiGruVars {
    pub forward: GruCellVars,
    pub backward: GruCellVars,
}

impl BiGruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGruParams {
            forward: GruCellParams::zeros(input, hidden),
            backward: GruCellParams::zeros(input, hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiGruParams {
            forward: GruCellParams::init(input, hidden, rng),
            backward: GruCellParams::init(input, hidden, rng),
        }
    }

    /// Width of each output row (both directions).
    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden_size()
    }
}

impl Parameters for BiGruParams {
    type Vars = BiGruVars;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.forward.visit(&join(prefix, "forward"), f);
        self.backward.visit(&join(prefix, "backward"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "forward"), f);
        self.backward.visit_mut(&join(prefix, "backward"), f);
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<Var>) -> BiGruVars {
        BiGruVars {
            forward: self.forward.bind(tape, leaves),
            backward: self.backward.bind(tape, leaves),
        }
    }
}

/// `[m×input] → [m×2u]`: row `j` is the forward state after `x_1..x_j`
/// concatenated with the backward state after `x_m..x_j`.
pub fn bigru_forward(tape: &mut Tape, xs: Var, p: &BiGruVars) -> Result<Var> {
    if tape.shape(xs).len() != 2 {
        return Err(Error::Dimension(format!(
            "BiGRU input must be a matrix, got {:?}",
            tape.shape(xs)
        )));
    }
    let fwd = gru_sequence(tape, xs, &p.forward, false)?;
    let bwd = gru_sequence(tape, xs, &p.backward, true)?;
    let fwd = tape.stack_rows(&fwd)?;
    let bwd = tape.stack_rows(&bwd)?;
    tape.concat_cols(fwd, bwd)
}
