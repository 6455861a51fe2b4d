//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Every primitive pushes one node holding its forward value and the handles
//! of its inputs. Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: bool },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Vec<usize>),
    PairwiseSqDist(Var),
    LogMeanExpOffDiag(Var),
    BceWithLogits(Var, Vec<f64>),
    /// Elementwise map whose derivative is supplied by the caller.
    Elementwise(Var, fn(f64) -> f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SelectRows(..) => "select_rows",
            Op::PairwiseSqDist(_) => "pairwise_sq_dist",
            Op::LogMeanExpOffDiag(_) => "log_mean_exp_offdiag",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::Elementwise(..) => "elementwise",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to leaf `v`; exact zeros when `v` does not reach
    /// the output. Interior adjoints are discarded during the sweep.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Whether any adjoint reached `v`.
    pub fn touched(&self, v: Var) -> bool {
        self.adjoints[v.0].is_some()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// First node (index, op name) whose value contained NaN or ±∞.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.first_nonfinite
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: true })
    }

    /// Non-trainable leaf (inputs, targets).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: false })
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { param: true })
    }

    /// Copy of `v` as a fresh constant: no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a + bias` with a `1 × n` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::scalar(m.sum() / m.len().max(1) as f64);
        self.push(value, Op::Mean(a))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::contract(format!(
                "select_rows: index {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let value = m.select_rows(idx);
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec())))
    }

    /// `B × B` matrix of squared Euclidean distances between rows of `a`.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let b = m.rows();
        let mut value = Matrix::zeros(b, b);
        for i in 0..b {
            for j in (i + 1)..b {
                let d: f64 = m
                    .row(i)
                    .iter()
                    .zip(m.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                value[(i, j)] = d;
                value[(j, i)] = d;
            }
        }
        self.push(value, Op::PairwiseSqDist(a))
    }

    /// `ln( mean_{i≠j} exp(a_ij) )` over the off-diagonal of a square matrix,
    /// evaluated with a max shift.
    pub fn log_mean_exp_offdiag(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let n = m.rows();
        if n != m.cols() || n < 2 {
            return Err(Error::Shape {
                op: "log_mean_exp_offdiag",
                left: m.shape(),
                right: (n, n),
            });
        }
        let value = Matrix::scalar(offdiag_lse(m) - ((n * (n - 1)) as f64).ln());
        Ok(self.push(value, Op::LogMeanExpOffDiag(a)))
    }

    /// Mean binary cross-entropy of `logits` (any shape, `B` entries) against
    /// 0/1 `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let l = self.value(logits);
        if l.len() != labels.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: l.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::contract(format!("non-binary label {bad}")));
        }
        if labels.is_empty() {
            return Err(Error::contract("bce_with_logits on empty batch"));
        }
        let total: f64 = l
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(-(2.0 * y - 1.0) * z))
            .sum();
        let value = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(value, Op::BceWithLogits(logits, labels.to_vec())))
    }

    /// Elementwise `f` with caller-supplied derivative `df`.
    pub fn elementwise(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, Op::Elementwise(a, df))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got {out_shape:?}"
            )));
        }
        let n = output.0 + 1;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut adj, *a, g.matmul_t(bv)?);
                    accumulate(&mut adj, *b, av.t_matmul(&g)?);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut adj, *bias, g.column_sums());
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), "mul_bwd", |u, y| u * y)?;
                    let gb = g.zip_map(self.value(*a), "mul_bwd", |u, x| u * x)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.scale(*c)),
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let ga = g.zip_map(self.value(*a), "leaky_relu_bwd", |u, x| {
                        if x > 0.0 {
                            u
                        } else {
                            s * u
                        }
                    })?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, "sigmoid_bwd", |u, s| u * s * (1.0 - s))?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, "exp_bwd", |u, e| u * e)?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(*a), "ln_bwd", |u, x| u / x)?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), "square_bwd", |u, x| 2.0 * u * x)?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let k = (r * c).max(1) as f64;
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.item() / k));
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, u) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += u;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::PairwiseSqDist(a) => {
                    let x = self.value(*a);
                    let (b, d) = x.shape();
                    let mut ga = Matrix::zeros(b, d);
                    for i in 0..b {
                        for j in 0..b {
                            if i == j {
                                continue;
                            }
                            let w = 2.0 * (g[(i, j)] + g[(j, i)]);
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                ga[(i, k)] += w * (x[(i, k)] - x[(j, k)]);
                            }
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::LogMeanExpOffDiag(a) => {
                    let x = self.value(*a);
                    let n = x.rows();
                    let lse = offdiag_lse(x);
                    let u = g.item();
                    let mut ga = Matrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                ga[(i, j)] = u * (x[(i, j)] - lse).exp();
                            }
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::BceWithLogits(a, labels) => {
                    let l = self.value(*a);
                    let u = g.item() / labels.len() as f64;
                    let mut ga = l.clone();
                    for (o, (&z, &y)) in ga.as_mut_slice().iter_mut().zip(l.as_slice().iter().zip(labels)) {
                        *o = u * (sigmoid(z) - y);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Elementwise(a, df) => {
                    let df = *df;
                    let ga = g.zip_map(self.value(*a), "elementwise_bwd", |u, x| u * df(x))?;
                    accumulate(&mut adj, *a, ga);
                }
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing
            .add_assign(&g)
            .expect("adjoint shape matches its node"),
        slot @ None => *slot = Some(g),
    }
}

fn offdiag_lse(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max = max.max(m[(i, j)]);
            }
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += (m[(i, j)] - max).exp();
            }
        }
    }
    max + s.ln()
}
