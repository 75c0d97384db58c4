//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are logically rank 0, 1, or 2 and stored row-major; internally
//! every tensor is viewed as a `(rows, cols)` matrix. Graphs are built
//! eagerly as ops run. `backward` on a scalar root walks the graph once in
//! reverse topological order and accumulates gradients into every
//! gradient-requiring node, so parameter leaves end up with d(root)/d(param).
//!
//! The graph is a DAG by construction: ops hold owning handles to their
//! inputs and tensors are immutable once created (parameter data is updated
//! in place between graph builds, never while a graph referencing it is
//! alive and being differentiated).
//!
//! Binary elementwise ops support limited broadcasting: equal shapes, a
//! row vector `[1, c]` against `[r, c]`, a column vector `[r, 1]` against
//! `[r, c]`, and scalars against anything.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in the computation graph. Cloning is cheap (shared ref).
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

struct Node {
    id: u64,
    rows: usize,
    cols: usize,
    rank: u8,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    MatMul(Tensor, Tensor),
    Neg(Tensor),
    Exp(Tensor),
    Ln(Tensor),
    Relu(Tensor),
    Softplus(Tensor),
    Sigmoid(Tensor),
    Clamp(Tensor, f64, f64),
    AddScalar(Tensor),
    MulScalar(Tensor, f64),
    SumAll(Tensor),
    SumCols(Tensor),
    RepeatRows(Tensor, usize),
    NarrowCols(Tensor, usize, usize),
    ConcatCols(Vec<Tensor>),
    Reshape(Tensor),
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Clamp(a, _, _)
            | Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::SumAll(a)
            | Op::SumCols(a)
            | Op::RepeatRows(a, _)
            | Op::NarrowCols(a, _, _)
            | Op::Reshape(a) => vec![a],
            Op::ConcatCols(parts) => parts.iter().collect(),
        }
    }
}

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn shape_of(rank: u8, rows: usize, cols: usize) -> Vec<usize> {
    match rank {
        0 => vec![],
        1 => vec![cols],
        _ => vec![rows, cols],
    }
}

/// Stable sigmoid on a plain float.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softplus ln(1 + exp(x)) on a plain float.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    fn make(rank: u8, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(data.len(), rows * cols);
        Tensor(Rc::new(Node {
            id: next_id(),
            rows,
            cols,
            rank,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// Rank-0 constant.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(0, 1, 1, vec![v], false, Op::Leaf)
    }

    /// Rank-1 constant.
    pub fn vector(data: Vec<f64>) -> Tensor {
        let c = data.len();
        Tensor::make(1, 1, c, data, false, Op::Leaf)
    }

    /// Rank-2 constant.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor::make(2, rows, cols, data, false, Op::Leaf))
    }

    /// Rank-2 parameter leaf (participates in gradients).
    pub fn param(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "param data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor::make(2, rows, cols, data, true, Op::Leaf))
    }

    /// Rank-0 parameter leaf.
    pub fn param_scalar(v: f64) -> Tensor {
        Tensor::make(0, 1, 1, vec![v], true, Op::Leaf)
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::make(2, rows, cols, vec![0.0; rows * cols], false, Op::Leaf)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn len(&self) -> usize {
        self.0.rows * self.0.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        shape_of(self.0.rank, self.0.rows, self.0.cols)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.0.data.borrow()[i * self.0.cols + j]
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "expected single-element tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data.borrow()[0])
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy of this tensor's current values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.0.rank, self.0.rows, self.0.cols, self.to_vec(), false, Op::Leaf)
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn binary_shape(&self, other: &Tensor, name: &str) -> Result<(u8, usize, usize)> {
        let (r1, c1) = (self.0.rows, self.0.cols);
        let (r2, c2) = (other.0.rows, other.0.cols);
        let rows_ok = r1 == r2 || r1 == 1 || r2 == 1;
        let cols_ok = c1 == c2 || c1 == 1 || c2 == 1;
        if !rows_ok || !cols_ok {
            return Err(Error::Shape(format!(
                "{} shapes {:?} and {:?} are not broadcastable",
                name,
                self.shape(),
                other.shape()
            )));
        }
        let rank = self.0.rank.max(other.0.rank);
        Ok((rank, r1.max(r2), c1.max(c2)))
    }

    fn elementwise(&self, other: &Tensor, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Tensor> {
        let (rank, rows, cols) = self.binary_shape(other, name)?;
        let a = self.0.data.borrow();
        let b = other.0.data.borrow();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let av = bcast_get(&a, self.0.rows, self.0.cols, i, j);
                let bv = bcast_get(&b, other.0.rows, other.0.cols, i, j);
                out[i * cols + j] = f(av, bv);
            }
        }
        drop(a);
        drop(b);
        let rg = self.0.requires_grad || other.0.requires_grad;
        Ok(Tensor::make(rank, rows, cols, out, rg, op))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.clone(), other.clone()))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, "div", |a, b| a / b, Op::Div(self.clone(), other.clone()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.0.rows, self.0.cols);
        let (k2, m) = (other.0.rows, other.0.cols);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out = matmul_nn(&self.0.data.borrow(), &other.0.data.borrow(), n, k, m);
        let rg = self.0.requires_grad || other.0.requires_grad;
        Ok(Tensor::make(2, n, m, out, rg, Op::MatMul(self.clone(), other.clone())))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let out: Vec<f64> = self.0.data.borrow().iter().map(|&x| f(x)).collect();
        Tensor::make(self.0.rank, self.0.rows, self.0.cols, out, self.0.requires_grad, op)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, Op::Neg(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Tensor {
        self.unary(f64::ln, Op::Ln(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), Op::Relu(self.clone()))
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, Op::Softplus(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, Op::Sigmoid(self.clone()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(|x| x.clamp(lo, hi), Op::Clamp(self.clone(), lo, hi))
    }

    pub fn add_scalar(&self, v: f64) -> Tensor {
        self.unary(|x| x + v, Op::AddScalar(self.clone()))
    }

    pub fn mul_scalar(&self, v: f64) -> Tensor {
        self.unary(|x| x * v, Op::MulScalar(self.clone(), v))
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.0.data.borrow().iter().sum();
        Tensor::make(0, 1, 1, vec![s], self.0.requires_grad, Op::SumAll(self.clone()))
    }

    /// Mean of all entries, as a rank-0 tensor.
    pub fn mean_all(&self) -> Tensor {
        self.sum_all().mul_scalar(1.0 / self.len() as f64)
    }

    /// Row sums: `[n, p] -> [n, 1]`.
    pub fn sum_cols(&self) -> Tensor {
        let (n, p) = (self.0.rows, self.0.cols);
        let d = self.0.data.borrow();
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = d[i * p..(i + 1) * p].iter().sum();
        }
        drop(d);
        Tensor::make(2, n, 1, out, self.0.requires_grad, Op::SumCols(self.clone()))
    }

    /// Each row repeated `k` times consecutively: `[n, p] -> [n*k, p]`.
    pub fn repeat_rows(&self, k: usize) -> Tensor {
        let (n, p) = (self.0.rows, self.0.cols);
        let d = self.0.data.borrow();
        let mut out = Vec::with_capacity(n * k * p);
        for i in 0..n {
            for _ in 0..k {
                out.extend_from_slice(&d[i * p..(i + 1) * p]);
            }
        }
        drop(d);
        Tensor::make(2, n * k, p, out, self.0.requires_grad, Op::RepeatRows(self.clone(), k))
    }

    /// Column slice `[n, p] -> [n, len]` starting at `start`.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, p) = (self.0.rows, self.0.cols);
        if start + len > p {
            return Err(Error::Shape(format!(
                "narrow_cols {}..{} out of bounds for {} cols",
                start,
                start + len,
                p
            )));
        }
        let d = self.0.data.borrow();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&d[i * p + start..i * p + start + len]);
        }
        drop(d);
        Ok(Tensor::make(2, n, len, out, self.0.requires_grad, Op::NarrowCols(self.clone(), start, len)))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols needs at least one tensor".into()));
        }
        let n = parts[0].0.rows;
        for t in parts {
            if t.0.rows != n {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {} vs {}",
                    t.0.rows, n
                )));
            }
        }
        let total: usize = parts.iter().map(|t| t.0.cols).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for t in parts {
                let d = t.0.data.borrow();
                out.extend_from_slice(&d[i * t.0.cols..(i + 1) * t.0.cols]);
            }
        }
        let rg = parts.iter().any(|t| t.0.requires_grad);
        Ok(Tensor::make(2, n, total, out, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-major reshape to `[rows, cols]` (element count must match).
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {}x{}",
                self.shape(),
                rows,
                cols
            )));
        }
        Ok(Tensor::make(2, rows, cols, self.to_vec(), self.0.requires_grad, Op::Reshape(self.clone())))
    }

    /// Per-row maximum as a constant `[n, 1]` tensor (no gradient). Used to
    /// stabilize log-sum-exp; the subtraction cancels exactly, so treating
    /// the max as constant leaves gradients unchanged.
    pub fn max_cols_detached(&self) -> Tensor {
        let (n, p) = (self.0.rows, self.0.cols);
        let d = self.0.data.borrow();
        let mut out = vec![f64::NEG_INFINITY; n];
        for i in 0..n {
            for j in 0..p {
                out[i] = out[i].max(d[i * p + j]);
            }
        }
        drop(d);
        Tensor::make(2, n, 1, out, false, Op::Leaf)
    }

    /// Numerically stable per-row log(sum(exp(x))): `[n, p] -> [n, 1]`.
    pub fn log_sum_exp_cols(&self) -> Result<Tensor> {
        let m = self.max_cols_detached();
        let shifted = self.sub(&m)?;
        let s = shifted.exp().sum_cols();
        s.ln().add(&m)
    }

    /// Numerically stable per-row softmax: `[n, p] -> [n, p]`.
    pub fn softmax_cols(&self) -> Result<Tensor> {
        let m = self.max_cols_detached();
        let e = self.sub(&m)?.exp();
        e.div(&e.sum_cols())
    }

    /// Reverse-mode gradient pass from a scalar root. Fills `grad` on every
    /// gradient-requiring node reachable through differentiable ops.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let grad = node.0.grad.borrow().clone();
            let grad = match grad {
                Some(g) => g,
                None => continue,
            };
            node.push_grad_to_inputs(&grad);
        }
        Ok(())
    }

    /// Post-order topological ordering of the gradient-requiring subgraph,
    /// visiting every node exactly once (iterative, safe for deep graphs).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for input in node.0.op.inputs() {
                if input.0.requires_grad && !seen.contains(&input.0.id) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    fn push_grad_to_inputs(&self, grad: &[f64]) {
        let (rows, cols) = (self.0.rows, self.0.cols);
        match &self.0.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                binary_grad(a, b, grad, rows, cols, |_a, _b, g| g, |_a, _b, g| g);
            }
            Op::Sub(a, b) => {
                binary_grad(a, b, grad, rows, cols, |_a, _b, g| g, |_a, _b, g| -g);
            }
            Op::Mul(a, b) => {
                binary_grad(a, b, grad, rows, cols, |_a, bb, g| g * bb, |aa, _b, g| g * aa);
            }
            Op::Div(a, b) => {
                binary_grad(a, b, grad, rows, cols, |_a, bb, g| g / bb, |aa, bb, g| {
                    -g * aa / (bb * bb)
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = (a.0.rows, a.0.cols);
                let m = b.0.cols;
                if a.0.requires_grad {
                    let da = matmul_nt(grad, &b.0.data.borrow(), n, m, k);
                    a.accumulate_grad(&da);
                }
                if b.0.requires_grad {
                    let db = matmul_tn(&a.0.data.borrow(), grad, n, k, m);
                    b.accumulate_grad(&db);
                }
            }
            Op::Neg(a) => unary_grad(a, grad, |_x, _y, g| -g, self),
            Op::Exp(a) => unary_grad(a, grad, |_x, y, g| g * y, self),
            Op::Ln(a) => unary_grad(a, grad, |x, _y, g| g / x, self),
            Op::Relu(a) => unary_grad(a, grad, |x, _y, g| if x > 0.0 { g } else { 0.0 }, self),
            Op::Softplus(a) => unary_grad(a, grad, |x, _y, g| g * sigmoid(x), self),
            Op::Sigmoid(a) => unary_grad(a, grad, |_x, y, g| g * y * (1.0 - y), self),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary_grad(a, grad, move |x, _y, g| if x >= lo && x <= hi { g } else { 0.0 }, self)
            }
            Op::AddScalar(a) => unary_grad(a, grad, |_x, _y, g| g, self),
            Op::MulScalar(a, v) => {
                let v = *v;
                unary_grad(a, grad, move |_x, _y, g| g * v, self)
            }
            Op::SumAll(a) => {
                if a.0.requires_grad {
                    let da = vec![grad[0]; a.len()];
                    a.accumulate_grad(&da);
                }
            }
            Op::SumCols(a) => {
                if a.0.requires_grad {
                    let (n, p) = (a.0.rows, a.0.cols);
                    let mut da = vec![0.0; n * p];
                    for i in 0..n {
                        for j in 0..p {
                            da[i * p + j] = grad[i];
                        }
                    }
                    a.accumulate_grad(&da);
                }
            }
            Op::RepeatRows(a, k) => {
                if a.0.requires_grad {
                    let (n, p) = (a.0.rows, a.0.cols);
                    let mut da = vec![0.0; n * p];
                    for i in 0..n {
                        for t in 0..*k {
                            let src = (i * k + t) * p;
                            for j in 0..p {
                                da[i * p + j] += grad[src + j];
                            }
                        }
                    }
                    a.accumulate_grad(&da);
                }
            }
            Op::NarrowCols(a, start, len) => {
                if a.0.requires_grad {
                    let (n, p) = (a.0.rows, a.0.cols);
                    let mut da = vec![0.0; n * p];
                    for i in 0..n {
                        for j in 0..*len {
                            da[i * p + start + j] = grad[i * len + j];
                        }
                    }
                    a.accumulate_grad(&da);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for t in parts {
                    let c = t.0.cols;
                    if t.0.requires_grad {
                        let n = t.0.rows;
                        let mut dt = vec![0.0; n * c];
                        for i in 0..n {
                            for j in 0..c {
                                dt[i * c + j] = grad[i * cols + offset + j];
                            }
                        }
                        t.accumulate_grad(&dt);
                    }
                    offset += c;
                }
            }
            Op::Reshape(a) => {
                if a.0.requires_grad {
                    a.accumulate_grad(grad);
                }
            }
        }
    }
}

fn bcast_get(data: &[f64], rows: usize, cols: usize, i: usize, j: usize) -> f64 {
    let ii = if rows == 1 { 0 } else { i };
    let jj = if cols == 1 { 0 } else { j };
    data[ii * cols + jj]
}

/// Accumulate both operand gradients of a broadcasting elementwise op,
/// summing over any broadcast dimensions. `fa`/`fb` map
/// `(a_val, b_val, out_grad)` to the local contribution for that operand.
fn binary_grad(
    a: &Tensor,
    b: &Tensor,
    grad: &[f64],
    out_rows: usize,
    out_cols: usize,
    fa: impl Fn(f64, f64, f64) -> f64,
    fb: impl Fn(f64, f64, f64) -> f64,
) {
    let ad = a.0.data.borrow();
    let bd = b.0.data.borrow();
    if a.0.requires_grad {
        let mut acc = vec![0.0; a.len()];
        for i in 0..out_rows {
            for j in 0..out_cols {
                let av = bcast_get(&ad, a.0.rows, a.0.cols, i, j);
                let bv = bcast_get(&bd, b.0.rows, b.0.cols, i, j);
                let ti = if a.0.rows == 1 { 0 } else { i };
                let tj = if a.0.cols == 1 { 0 } else { j };
                acc[ti * a.0.cols + tj] += fa(av, bv, grad[i * out_cols + j]);
            }
        }
        a.accumulate_grad(&acc);
    }
    if b.0.requires_grad {
        let mut acc = vec![0.0; b.len()];
        for i in 0..out_rows {
            for j in 0..out_cols {
                let av = bcast_get(&ad, a.0.rows, a.0.cols, i, j);
                let bv = bcast_get(&bd, b.0.rows, b.0.cols, i, j);
                let ti = if b.0.rows == 1 { 0 } else { i };
                let tj = if b.0.cols == 1 { 0 } else { j };
                acc[ti * b.0.cols + tj] += fb(av, bv, grad[i * out_cols + j]);
            }
        }
        b.accumulate_grad(&acc);
    }
}

fn unary_grad(a: &Tensor, grad: &[f64], f: impl Fn(f64, f64, f64) -> f64, out: &Tensor) {
    if !a.0.requires_grad {
        return;
    }
    let x = a.0.data.borrow();
    let y = out.0.data.borrow();
    let da: Vec<f64> = (0..grad.len()).map(|i| f(x[i], y[i], grad[i])).collect();
    drop(x);
    drop(y);
    a.accumulate_grad(&da);
}

/// C = A (n x k) * B (k x m).
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let (brow, crow) = (&b[l * m..(l + 1) * m], &mut c[i * m..(i + 1) * m]);
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C = A (n x m) * B^T where B is (k x m); result is (n x k).
fn matmul_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut s = 0.0;
            for l in 0..m {
                s += a[i * m + l] * b[j * m + l];
            }
            c[i * k + j] = s;
        }
    }
    c
}

/// C = A^T (k x n form, A is n x k) * B (n x m); result is (k x m).
fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * m];
    for i in 0..n {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let (brow, crow) = (&b[i * m..(i + 1) * m], &mut c[l * m..(l + 1) * m]);
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}
