//! Reverse-mode differentiation over [`Array`] values.
//!
//! Operations are appended to a [`Tape`] in evaluation order; the node id
//! doubles as its topological position. [`Tape::backward`] walks the nodes in
//! strict reverse insertion order and accumulates adjoints. A tape is owned by
//! one thread; independent tapes can be driven concurrently.

use crate::error::{Error, Result};

use super::array::{dot, gemm, Array};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Abs(Var),
    Reshape(Var),
    NormalizeRows(Var, f64),
    L2NormRows(Var),
    MaxOverAxis(Var, Vec<usize>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    /// Blocks the adjoint of its input.
    StopGradient,
    SoftmaxCrossEntropy(Var, Vec<usize>, Array),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when no path reaches it.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, zero-filled when unreachable.
    pub fn wrt(&self, var: Var) -> Array {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array::zeros(&self.shapes[var.0]),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (or constant) value.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a length-`cols` bias vector to every row of a matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        let b = self.value(bias);
        if b.shape() != [cols] {
            return Err(Error::dim(format!(
                "bias of shape {:?} for a {rows}x{cols} matrix",
                b.shape()
            )));
        }
        let mut out = self.value(a).clone();
        for r in 0..rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::arg(format!("normalize eps must be > 0, got {eps}")));
        }
        let out = self.value(a).normalize_rows(eps);
        Ok(self.push(out, Op::NormalizeRows(a, eps)))
    }

    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).l2_norm_rows();
        self.push(out, Op::L2NormRows(a))
    }

    /// Maximum along `axis`; the adjoint flows only to the first argmax.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (out, argmax) = self.value(a).max_over_axis(axis)?;
        Ok(self.push(out, Op::MaxOverAxis(a, argmax)))
    }

    /// Sum over the last axis.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 {
            return Err(Error::dim("row_sum of a scalar"));
        }
        let (rows, _) = x.matrix_dims();
        let data = (0..rows).map(|r| x.row(r).iter().sum()).collect();
        let shape = &x.shape()[..x.rank() - 1];
        let out = Array::from_vec(shape, data)?;
        Ok(self.push(out, Op::RowSum(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a))
    }

    /// Selects rows (repetition allowed) of a matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::dim(format!("row {r} out of range for {n} rows")));
            }
            data.extend_from_slice(x.row(r));
        }
        let out = Array::from_vec(&[rows.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(a, rows.to_vec())))
    }

    /// Identity in the forward pass; blocks every adjoint in the backward pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient)
    }

    /// Mean softmax cross-entropy of `n×k` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (n, k) = x.dims2()?;
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
        }
        let mut probs = Array::zeros(&[n, k]);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::arg(format!("label {y} out of range for {k} classes")));
            }
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - max).exp() / z;
            }
            total += z.ln() + max - row[y];
        }
        let out = Array::scalar(total / n as f64);
        Ok(self.push(out, Op::SoftmaxCrossEntropy(logits, labels.to_vec(), probs)))
    }

    /// Adjoints of every node with respect to the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array::filled(self.value(output).shape(), 1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes[..=output.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let mut acc = |v: Var, delta: Array| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.matrix_dims();
                let n = bv.matrix_dims().1;
                // dA = G·Bᵀ
                let mut da = Array::zeros(&[m, k]);
                gemm((m, n, k), g.data(), (n, 1), bv.data(), (1, n), da.data_mut(), 0.0);
                // dB = Aᵀ·G
                let mut db = Array::zeros(&[k, n]);
                gemm((k, m, n), av.data(), (1, k), g.data(), (n, 1), db.data_mut(), 0.0);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => acc(*a, g.transpose().expect("matrix adjoint")),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let da = g.mul(self.value(*b)).expect("same shape");
                let db = g.mul(self.value(*a)).expect("same shape");
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddBias(a, bias) => {
                let (rows, cols) = g.matrix_dims();
                let mut db = Array::zeros(&[cols]);
                for r in 0..rows {
                    for (d, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                acc(*a, g.clone());
                acc(*bias, db);
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let d = g
                    .zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .expect("same shape");
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let d = g
                    .zip_map(self.value(*a), |gv, x| gv * gelu_grad(x))
                    .expect("same shape");
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .zip_map(&node.value, |gv, y| gv * (1.0 - y * y))
                    .expect("same shape");
                acc(*a, d);
            }
            Op::Abs(a) => {
                let d = g
                    .zip_map(self.value(*a), |gv, x| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .expect("same shape");
                acc(*a, d);
            }
            Op::Reshape(a) => acc(*a, g.reshape(self.value(*a).shape()).expect("same size")),
            Op::NormalizeRows(a, eps) => {
                let x = self.value(*a);
                let y = &node.value;
                let (rows, _) = x.matrix_dims();
                let mut d = Array::zeros(x.shape());
                for r in 0..rows {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    let gr = g.row(r);
                    let dr = d.row_mut(r);
                    if norm > *eps {
                        let yg = dot(y.row(r), gr);
                        for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(y.row(r)) {
                            *dv = (gv - yv * yg) / norm;
                        }
                    } else {
                        for (dv, gv) in dr.iter_mut().zip(gr) {
                            *dv = gv / eps;
                        }
                    }
                }
                acc(*a, d);
            }
            Op::L2NormRows(a) => {
                let x = self.value(*a);
                let (rows, _) = x.matrix_dims();
                let mut d = Array::zeros(x.shape());
                for r in 0..rows {
                    let norm = node.value.data()[r];
                    if norm > 0.0 {
                        let scale = g.data()[r] / norm;
                        for (dv, xv) in d.row_mut(r).iter_mut().zip(x.row(r)) {
                            *dv = scale * xv;
                        }
                    }
                }
                acc(*a, d);
            }
            Op::MaxOverAxis(a, argmax) => {
                let mut d = Array::zeros(self.value(*a).shape());
                for (gv, &src) in g.data().iter().zip(argmax) {
                    d.data_mut()[src] += gv;
                }
                acc(*a, d);
            }
            Op::RowSum(a) => {
                let x = self.value(*a);
                let (rows, _) = x.matrix_dims();
                let mut d = Array::zeros(x.shape());
                for r in 0..rows {
                    let gv = g.data()[r];
                    d.row_mut(r).iter_mut().for_each(|v| *v = gv);
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array::filled(self.value(*a).shape(), g.data()[0])),
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Array::filled(x.shape(), g.data()[0] / x.len() as f64));
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array::zeros(self.value(*a).shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (dv, gv) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                        *dv += gv;
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxCrossEntropy(logits, labels, probs) => {
                let n = labels.len() as f64;
                let scale = g.data()[0] / n;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d.row_mut(i)[y] -= 1.0;
                }
                acc(*logits, d.scale(scale));
            }
        }
    }
}
