//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass
//! (define-by-run); [`Tape::backward`] replays it once in reverse to fill
//! gradients. Tensors live inside the tape; a [`Var`] is a cheap handle.
//!
//! All arithmetic is 64-bit. There is no broadcasting beyond
//! scalar-times-tensor: binary elementwise ops require exact shape equality,
//! which keeps every backward rule auditable.

use std::cell::RefCell;

use crate::error::{Error, Result};

/// Raw triple-loop matrix product, `a` is m×k and `b` is k×n, both row-major.
///
/// Shared by the tape op and every non-tape consumer so that a value computed
/// on and off the tape from identical inputs is bitwise identical.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub(crate) fn add_raw(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn relu_raw(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Numerically stable `log softmax(z / t)` (max subtraction).
pub fn log_softmax_scaled(z: &[f64], t: f64) -> Vec<f64> {
    let u: Vec<f64> = z.iter().map(|&x| x / t).collect();
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + u.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    u.iter().map(|&x| x - lse).collect()
}

/// `softmax(z / t)`, derived from the stable log form.
pub fn softmax_scaled(z: &[f64], t: f64) -> Vec<f64> {
    log_softmax_scaled(z, t).iter().map(|&x| x.exp()).collect()
}

/// L2-normalize each row of a row-major r×c matrix; zero rows stay zero.
pub fn normalize_rows_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..cols {
                out[i * cols + j] = row[j] / norm;
            }
        }
    }
    out
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose(usize),
    SoftmaxT(usize, f64),
    LogSoftmaxT(usize, f64),
    Pick(usize, usize),
    StackRows(Vec<usize>),
    NormalizeRows(usize),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Gradient tape holding all tensors of one forward/backward pass.
///
/// Not `Sync`: a tape and its vars are confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one tensor on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("value", &self.value())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let len = value.len();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            grad: vec![0.0; len],
            requires_grad,
            op,
        });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a differentiation
    /// target; constants (data, frozen teacher outputs) use `false`.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Var<'_>> {
        if numel(shape) != data.len() {
            return Err(Error::Dim(format!(
                "leaf shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    /// Constant scalar leaf.
    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(vec![1], vec![value], false, Op::Leaf)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Stack k row vectors (shape `[d]` or `[1, d]`) into a k×d matrix.
    pub fn stack_rows<'t>(&'t self, rows: &[Var<'t>]) -> Result<Var<'t>> {
        if rows.is_empty() {
            return Err(Error::Param("stack_rows needs at least one row".into()));
        }
        let d = rows[0].len();
        let mut value = Vec::with_capacity(rows.len() * d);
        let mut requires = false;
        for r in rows {
            if r.len() != d || r.shape().len() > 2 || (r.shape().len() == 2 && r.shape()[0] != 1) {
                return Err(Error::Dim(format!(
                    "stack_rows: row shape {:?} incompatible with width {}",
                    r.shape(),
                    d
                )));
            }
            value.extend_from_slice(&r.value());
            requires |= self.requires(r.id);
        }
        let ids = rows.iter().map(|r| r.id).collect();
        Ok(self.push(vec![rows.len(), d], value, requires, Op::StackRows(ids)))
    }

    /// Reverse pass from a scalar loss. Fills `grad` on every
    /// `requires_grad` tensor reachable from it, accumulating additively
    /// across shared uses.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        if nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        if !nodes[loss.id].value[0].is_finite() {
            return Err(Error::Contract("loss is not finite".into()));
        }
        for n in nodes.iter_mut() {
            for g in n.grad.iter_mut() {
                *g = 0.0;
            }
        }
        nodes[loss.id].grad[0] = 1.0;

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let g = nodes[id].grad.clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            // One accumulation closure keeps the requires_grad gate in one place.
            macro_rules! acc {
                ($pid:expr, $i:expr, $v:expr) => {
                    if nodes[$pid].requires_grad {
                        nodes[$pid].grad[$i] += $v;
                    }
                };
            }
            match &nodes[id].op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    for i in 0..g.len() {
                        acc!(a, i, g[i]);
                        acc!(b, i, g[i]);
                    }
                }
                &Op::Sub(a, b) => {
                    for i in 0..g.len() {
                        acc!(a, i, g[i]);
                        acc!(b, i, -g[i]);
                    }
                }
                &Op::Mul(a, b) => {
                    let av = nodes[a].value.clone();
                    let bv = nodes[b].value.clone();
                    for i in 0..g.len() {
                        acc!(a, i, g[i] * bv[i]);
                        acc!(b, i, g[i] * av[i]);
                    }
                }
                &Op::Scale(a, c) => {
                    for i in 0..g.len() {
                        acc!(a, i, g[i] * c);
                    }
                }
                &Op::Relu(a) => {
                    let av = nodes[a].value.clone();
                    for i in 0..g.len() {
                        // subgradient 0 at the kink
                        acc!(a, i, if av[i] > 0.0 { g[i] } else { 0.0 });
                    }
                }
                &Op::Log(a) => {
                    let av = nodes[a].value.clone();
                    for i in 0..g.len() {
                        acc!(a, i, g[i] / av[i]);
                    }
                }
                &Op::Square(a) => {
                    let av = nodes[a].value.clone();
                    for i in 0..g.len() {
                        acc!(a, i, 2.0 * av[i] * g[i]);
                    }
                }
                &Op::Sum(a) => {
                    let n = nodes[a].value.len();
                    for i in 0..n {
                        acc!(a, i, g[0]);
                    }
                }
                &Op::Mean(a) => {
                    let n = nodes[a].value.len();
                    let share = g[0] / n as f64;
                    for i in 0..n {
                        acc!(a, i, share);
                    }
                }
                &Op::Matmul { a, b, m, k, n } => {
                    let av = nodes[a].value.clone();
                    let bv = nodes[b].value.clone();
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            acc!(a, i * k + p, acc);
                        }
                    }
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            acc!(b, p * n + j, acc);
                        }
                    }
                }
                &Op::Transpose(a) => {
                    let (r, c) = (nodes[id].shape[0], nodes[id].shape[1]);
                    for i in 0..r {
                        for j in 0..c {
                            acc!(a, j * r + i, g[i * c + j]);
                        }
                    }
                }
                &Op::SoftmaxT(a, t) => {
                    // y = softmax(z/t): dz = y ∘ (g − ⟨g, y⟩) / t
                    let y = nodes[id].value.clone();
                    let dot: f64 = g.iter().zip(&y).map(|(gi, yi)| gi * yi).sum();
                    for i in 0..g.len() {
                        acc!(a, i, y[i] * (g[i] - dot) / t);
                    }
                }
                &Op::LogSoftmaxT(a, t) => {
                    // y = log softmax(z/t): dz = (g − softmax(z/t) · Σg) / t
                    let y = nodes[id].value.clone();
                    let gsum: f64 = g.iter().sum();
                    for i in 0..g.len() {
                        acc!(a, i, (g[i] - y[i].exp() * gsum) / t);
                    }
                }
                &Op::Pick(a, idx) => {
                    acc!(a, idx, g[0]);
                }
                Op::StackRows(ids) => {
                    let ids = ids.clone();
                    let d = nodes[id].shape[1];
                    for (r, pid) in ids.iter().enumerate() {
                        for j in 0..d {
                            acc!(*pid, j, g[r * d + j]);
                        }
                    }
                }
                &Op::NormalizeRows(a) => {
                    let (r, c) = (nodes[id].shape[0], nodes[id].shape[1]);
                    let av = nodes[a].value.clone();
                    let y = nodes[id].value.clone();
                    for i in 0..r {
                        let row = &av[i * c..(i + 1) * c];
                        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue; // zero row: zero subgradient
                        }
                        let yrow = &y[i * c..(i + 1) * c];
                        let dot: f64 = g[i * c..(i + 1) * c]
                            .iter()
                            .zip(yrow)
                            .map(|(gi, yi)| gi * yi)
                            .sum();
                        for j in 0..c {
                            acc!(a, i * c + j, (g[i * c + j] - dot * yrow[j]) / norm);
                        }
                    }
                }
            }
        }
        for n in nodes.iter() {
            if n.requires_grad && n.grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract("non-finite gradient after backward".into()));
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "item() on a non-scalar");
        nodes[self.id].value[0]
    }

    /// Gradient buffer, `None` for tensors that do not require grad.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        n.requires_grad.then(|| n.grad.clone())
    }

    fn same_shape(self, other: Var<'t>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn unary(self, value: Vec<f64>, op: Op) -> Var<'t> {
        let shape = self.shape();
        let req = self.tape.requires(self.id);
        self.tape.push(shape, value, req, op)
    }

    fn binary(self, other: Var<'t>, value: Vec<f64>, op: Op) -> Var<'t> {
        let shape = self.shape();
        let req = self.tape.requires(self.id) || self.tape.requires(other.id);
        self.tape.push(shape, value, req, op)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        let v = add_raw(&self.value(), &other.value());
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "sub")?;
        let v = self
            .value()
            .iter()
            .zip(other.value().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        let v = self
            .value()
            .iter()
            .zip(other.value().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Scalar-times-tensor, the one permitted broadcast.
    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().iter().map(|x| x * c).collect();
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn relu(self) -> Var<'t> {
        let v = relu_raw(&self.value());
        self.unary(v, Op::Relu(self.id))
    }

    pub fn log(self) -> Var<'t> {
        let v = self.value().iter().map(|x| x.ln()).collect();
        self.unary(v, Op::Log(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().iter().map(|x| x * x).collect();
        self.unary(v, Op::Square(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = vec![self.value().iter().sum()];
        let req = self.tape.requires(self.id);
        self.tape.push(vec![1], v, req, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let value = self.value();
        let v = vec![value.iter().sum::<f64>() / value.len() as f64];
        let req = self.tape.requires(self.id);
        self.tape.push(vec![1], v, req, Op::Mean(self.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dim(format!(
                "matmul: shapes {:?} and {:?} are incompatible",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let v = matmul_raw(&self.value(), &other.value(), m, k, n);
        let req = self.tape.requires(self.id) || self.tape.requires(other.id);
        Ok(self.tape.push(
            vec![m, n],
            v,
            req,
            Op::Matmul { a: self.id, b: other.id, m, k, n },
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dim(format!("transpose: shape {:?} is not 2-D", s)));
        }
        let (r, c) = (s[0], s[1]);
        let a = self.value();
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = a[i * c + j];
            }
        }
        let req = self.tape.requires(self.id);
        Ok(self.tape.push(vec![c, r], v, req, Op::Transpose(self.id)))
    }

    /// Temperature softmax over a vector.
    pub fn softmax_t(self, temperature: f64) -> Result<Var<'t>> {
        if temperature <= 0.0 {
            return Err(Error::Param(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        if self.is_empty() {
            return Err(Error::Param("softmax over an empty tensor".into()));
        }
        let v = softmax_scaled(&self.value(), temperature);
        Ok(self.unary(v, Op::SoftmaxT(self.id, temperature)))
    }

    /// Temperature log-softmax over a vector (stable, max subtraction).
    pub fn log_softmax_t(self, temperature: f64) -> Result<Var<'t>> {
        if temperature <= 0.0 {
            return Err(Error::Param(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        if self.is_empty() {
            return Err(Error::Param("log_softmax over an empty tensor".into()));
        }
        let v = log_softmax_scaled(&self.value(), temperature);
        Ok(self.unary(v, Op::LogSoftmaxT(self.id, temperature)))
    }

    /// Select one element as a scalar.
    pub fn pick(self, index: usize) -> Result<Var<'t>> {
        if index >= self.len() {
            return Err(Error::Data(format!(
                "pick index {index} out of range for {} elements",
                self.len()
            )));
        }
        let v = vec![self.value()[index]];
        let req = self.tape.requires(self.id);
        Ok(self.tape.push(vec![1], v, req, Op::Pick(self.id, index)))
    }

    /// Per-row L2 normalization of a 2-D tensor; zero rows pass through.
    pub fn normalize_rows(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dim(format!("normalize_rows: shape {:?} is not 2-D", s)));
        }
        let v = normalize_rows_raw(&self.value(), s[0], s[1]);
        Ok(self.unary(v, Op::NormalizeRows(self.id)))
    }
}

/// Central finite differences of a scalar function, the gradient oracle.
///
/// Step `h` per coordinate: `(f(x+h·e) − f(x−h·e)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Param(format!("finite difference step must be positive, got {step}")));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe)?;
        probe[i] = x[i] - step;
        let lo = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * step);
    }
    Ok(grad)
}

/// Relative error with a guarded denominator so near-zero pairs compare
/// absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}
