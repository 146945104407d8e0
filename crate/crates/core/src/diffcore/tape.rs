//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation evaluates eagerly, appends a node holding its output and
//! whatever its backward rule needs, and returns a [`Var`] handle. Nodes are
//! appended in evaluation order, so reverse append order is a valid reverse
//! topological order for the sweep in [`Tape::backward`].

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    Log,
    Exp,
    Neg,
}

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Log => x.ln(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Neg => -x,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Operation tag plus the context its backward rule reads.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `A · Bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m×n] + [n]` broadcast over rows.
    AddRowBias(Var, Var),
    /// `[m×n]` with row `i` scaled by `w[i]`.
    ScaleRows(Var, Var),
    /// `alpha·x + beta`
    Affine(Var, f64, f64),
    Unary(UnaryKind, Var),
    ClampMin(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    MeanRows(Var),
    Sum(Var),
    /// Saved mask already carries the `1/(1-p)` survivor scale.
    Dropout(Var, Vec<f64>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    Pick(Var, usize),
    Reshape(Var),
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b)
            | Op::ScaleRows(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Affine(a, ..)
            | Op::Unary(_, a)
            | Op::ClampMin(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Dropout(a, _)
            | Op::Row(a, _)
            | Op::Pick(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::StackRows(vs) => vs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Trainable input; [`Tape::backward`] reports a gradient for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    fn dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.value(v).as_matrix_dims().ok_or_else(|| {
            Error::Dimension(format!(
                "{what}: expected a vector or matrix, got shape {:?}",
                self.shape(v)
            ))
        })
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `A[p×q] · B[q×r]`. A 1-D `A` is a row vector and yields a 1-D result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims(a, "matmul")?;
        let (q2, r) = match self.shape(b) {
            [x, y] => (*x, *y),
            s => {
                return Err(Error::Dimension(format!(
                    "matmul: right operand must be a matrix, got {s:?}"
                )))
            }
        };
        if q != q2 {
            return Err(Error::Dimension(format!(
                "matmul: cannot multiply {:?} by {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; p * r];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, p, q, r);
        let shape = if self.value(a).ndim() == 1 { vec![r] } else { vec![p, r] };
        Ok(self.derived(Op::MatMul(a, b), Tensor::from_parts(shape, out)))
    }

    /// `A[p×q] · B[r×q]ᵀ`, the affine-layer product for weights stored
    /// output-major. A 1-D `A` yields a 1-D result.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims(a, "matmul_nt")?;
        let (r, q2) = match self.shape(b) {
            [x, y] => (*x, *y),
            s => {
                return Err(Error::Dimension(format!(
                    "matmul_nt: right operand must be a matrix, got {s:?}"
                )))
            }
        };
        if q != q2 {
            return Err(Error::Dimension(format!(
                "matmul_nt: cannot multiply {:?} by transpose of {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; p * r];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, p, q, r);
        let shape = if self.value(a).ndim() == 1 { vec![r] } else { vec![p, r] };
        Ok(self.derived(Op::MatMulNt(a, b), Tensor::from_parts(shape, out)))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.derived(op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`n` bias to every row of `a` (or to `a` itself if 1-D).
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims(a, "add_row_bias")?;
        if self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "add_row_bias: bias {:?} does not fit rows of {:?}",
                self.shape(bias),
                self.shape(a)
            )));
        }
        let b = self.value(bias).data();
        let va = self.value(a);
        let data = va
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.derived(Op::AddRowBias(a, bias), t))
    }

    /// Row-wise broadcast product: row `i` of `a[m×n]` times `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => {
                return Err(Error::Dimension(format!(
                    "scale_rows: expected a matrix, got {s:?}"
                )))
            }
        };
        if self.shape(weights) != [m] {
            return Err(Error::Dimension(format!(
                "scale_rows: weights {:?} do not match {m} rows",
                self.shape(weights)
            )));
        }
        let w = self.value(weights).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .zip(w)
            .flat_map(|(row, &s)| row.iter().map(move |x| x * s))
            .collect();
        let t = Tensor::from_parts(vec![m, n], data);
        Ok(self.derived(Op::ScaleRows(a, weights), t))
    }

    /// `alpha·a + beta`, elementwise.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let t = self.value(a).map(|x| alpha * x + beta);
        self.derived(Op::Affine(a, alpha, beta), t)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        if kind == UnaryKind::Log {
            if let Some(i) = self.value(a).data().iter().position(|&x| !(x > 0.0)) {
                return Err(Error::Domain(format!(
                    "log of non-positive value {} at index {i}",
                    self.value(a).data()[i]
                )));
            }
        }
        let t = self.value(a).map(|x| kind.apply(x));
        Ok(self.derived(Op::Unary(kind, a), t))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a).expect("exp is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a).expect("neg is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a).map(|x| x.max(floor));
        self.derived(Op::ClampMin(a, floor), t)
    }

    fn check_vector(&self, a: Var, what: &str) -> Result<()> {
        if self.value(a).ndim() != 1 {
            return Err(Error::Dimension(format!(
                "{what}: expected a vector, got shape {:?}",
                self.shape(a)
            )));
        }
        Ok(())
    }

    /// Max-shifted softmax over a vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vector(a, "softmax")?;
        let t = Tensor::from_parts(self.shape(a).to_vec(), softmax_values(self.value(a).data()));
        Ok(self.derived(Op::Softmax(a), t))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vector(a, "log_softmax")?;
        let x = self.value(a).data();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let t = Tensor::from_parts(self.shape(a).to_vec(), x.iter().map(|v| v - lse).collect());
        Ok(self.derived(Op::LogSoftmax(a), t))
    }

    /// Mean over the rows of `a[m×d]`, giving `[d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, d) = match self.shape(a) {
            [m, d] => (*m, *d),
            [d] => (1, *d),
            s => {
                return Err(Error::Dimension(format!(
                    "mean_rows: expected a matrix, got {s:?}"
                )))
            }
        };
        let mut out = vec![0.0; d];
        for row in self.value(a).data().chunks(d) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.derived(Op::MeanRows(a), Tensor::from_parts(vec![d], out)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.derived(Op::Sum(a), Tensor::scalar(s))
    }

    /// Inverted dropout. Identity (same handle) in eval mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.derived(Op::Dropout(a, mask), t))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => return Err(Error::Dimension(format!("row: expected a matrix, got {s:?}"))),
        };
        if i >= m {
            return Err(Error::Range(format!("row {i} of a {m}-row matrix")));
        }
        let data = self.value(a).row(i).to_vec();
        Ok(self.derived(Op::Row(a, i), Tensor::from_parts(vec![n], data)))
    }

    /// Stacks equal-length vectors into a `[rows.len() × n]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::EmptyInput("stack_rows of no rows".into()))?;
        self.check_vector(first, "stack_rows")?;
        let n = self.value(first).len();
        let mut data = Vec::with_capacity(n * rows.len());
        for &r in rows {
            if self.shape(r) != [n] {
                return Err(Error::Dimension(format!(
                    "stack_rows: row shape {:?} differs from [{n}]",
                    self.shape(r)
                )));
            }
            data.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::from_parts(vec![rows.len(), n], data);
        Ok(self.derived(Op::StackRows(rows.to_vec()), t))
    }

    /// `[m×p] ‖ [m×q] → [m×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims(a, "concat_cols")?;
        let (m2, q) = self.dims(b, "concat_cols")?;
        if m != m2 || self.value(a).ndim() != self.value(b).ndim() {
            return Err(Error::Dimension(format!(
                "concat_cols: {:?} and {:?} differ in rows",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let shape = if self.value(a).ndim() == 1 { vec![p + q] } else { vec![m, p + q] };
        Ok(self.derived(Op::ConcatCols(a, b), Tensor::from_parts(shape, data)))
    }

    /// Element `i` (flat index) as a one-element tensor.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let len = self.value(a).len();
        if i >= len {
            return Err(Error::Range(format!("pick index {i} of {len} elements")));
        }
        let v = self.value(a).data()[i];
        Ok(self.derived(Op::Pick(a, i), Tensor::scalar(v)))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec()).map_err(|_| {
            Error::Dimension(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(a)
            ))
        })?;
        Ok(self.derived(Op::Reshape(a), t))
    }

    /// Reverse sweep from a one-element `loss`. Gradients accumulate
    /// additively; trainable leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &TapeNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        // Accumulate into the gradient buffer of `v`, allocating zeros on first touch.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.nodes[a.0].value.as_matrix_dims().unwrap();
                let r = self.nodes[b.0].value.cols();
                if needs(*a) {
                    acc(*a, &mut |ga| gemm_nt_acc(g, val(*b), ga, p, r, q));
                }
                if needs(*b) {
                    acc(*b, &mut |gb| gemm_tn_acc(val(*a), g, gb, q, p, r));
                }
            }
            Op::MatMulNt(a, b) => {
                let (p, q) = self.nodes[a.0].value.as_matrix_dims().unwrap();
                let r = self.nodes[b.0].value.rows();
                if needs(*a) {
                    acc(*a, &mut |ga| gemm_nn_acc(g, val(*b), ga, p, r, q));
                }
                if needs(*b) {
                    acc(*b, &mut |gb| gemm_tn_acc(g, val(*a), gb, r, p, q));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*b, &mut |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                acc(*b, &mut |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                });
            }
            Op::AddRowBias(a, bias) => {
                acc(*a, &mut |ga| axpy(1.0, g, ga));
                let n = self.nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, gb);
                    }
                });
            }
            Op::ScaleRows(a, w) => {
                let n = self.nodes[a.0].value.cols();
                let (va, vw) = (val(*a), val(*w));
                acc(*a, &mut |ga| {
                    for ((grow, orow), s) in g.chunks(n).zip(ga.chunks_mut(n)).zip(vw) {
                        axpy(*s, grow, orow);
                    }
                });
                acc(*w, &mut |gw| {
                    for ((o, grow), arow) in gw.iter_mut().zip(g.chunks(n)).zip(va.chunks(n)) {
                        *o += dot(grow, arow);
                    }
                });
            }
            Op::Affine(a, alpha, _) => acc(*a, &mut |ga| axpy(*alpha, g, ga)),
            Op::Unary(kind, a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        let d = match kind {
                            UnaryKind::Tanh => 1.0 - y[i] * y[i],
                            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryKind::Log => 1.0 / x[i],
                            UnaryKind::Exp => y[i],
                            UnaryKind::Neg => -1.0,
                        };
                        ga[i] += g[i] * d;
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if x[i] > *floor {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let s = dot(g, y);
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += y[i] * (g[i] - s);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let s: f64 = g.iter().sum();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] - y[i].exp() * s;
                    }
                });
            }
            Op::MeanRows(a) => {
                let d = g.len();
                let m = self.nodes[a.0].value.len() / d;
                let inv = 1.0 / m as f64;
                acc(*a, &mut |ga| {
                    for row in ga.chunks_mut(d) {
                        axpy(inv, g, row);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Dropout(a, mask) => acc(*a, &mut |ga| {
                for ((o, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                    *o += gi * m;
                }
            }),
            Op::Row(a, i) => {
                let n = g.len();
                acc(*a, &mut |ga| axpy(1.0, g, &mut ga[i * n..(i + 1) * n]));
            }
            Op::StackRows(rows) => {
                let n = self.nodes[rows[0].0].value.len();
                for (k, r) in rows.iter().enumerate() {
                    acc(*r, &mut |gr| axpy(1.0, &g[k * n..(k + 1) * n], gr));
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.nodes[a.0].value.cols();
                let q = self.nodes[b.0].value.cols();
                acc(*a, &mut |ga| {
                    for (grow, orow) in g.chunks(p + q).zip(ga.chunks_mut(p)) {
                        axpy(1.0, &grow[..p], orow);
                    }
                });
                acc(*b, &mut |gb| {
                    for (grow, orow) in g.chunks(p + q).zip(gb.chunks_mut(q)) {
                        axpy(1.0, &grow[p..], orow);
                    }
                });
            }
            Op::Pick(a, i) => acc(*a, &mut |ga| ga[*i] += g[0]),
            Op::Reshape(a) => acc(*a, &mut |ga| axpy(1.0, g, ga)),
        }
    }
}

/// Gradients of trainable leaves, indexed by their [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a trainable leaf; `None` for constants and derived nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Numerically stable softmax over a slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= z);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// Row-major kernels. `c` is p×r in every variant.

/// c = a[p×q] · b[q×r]
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    c.iter_mut().for_each(|x| *x = 0.0);
    gemm_nn_acc(a, b, c, p, q, r);
}

fn gemm_nn_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik != 0.0 {
                axpy(aik, &b[k * r..(k + 1) * r], crow);
            }
        }
    }
}

/// c = a[p×q] · b[r×q]ᵀ
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    c.iter_mut().for_each(|x| *x = 0.0);
    gemm_nt_acc(a, b, c, p, q, r);
}

fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            c[i * r + j] += dot(arow, &b[j * q..(j + 1) * q]);
        }
    }
}

/// c[p×r] += a[q×p]ᵀ · b[q×r]
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for k in 0..q {
        let brow = &b[k * r..(k + 1) * r];
        for i in 0..p {
            let aki = a[k * p + i];
            if aki != 0.0 {
                axpy(aki, brow, &mut c[i * r..(i + 1) * r]);
            }
        }
    }
}
