//! Reverse-mode gradient tape over a fixed set of matrix primitives.
//!
//! Every primitive appends a node whose inputs already exist, so the node
//! vector is a topological order and the backward sweep is a single reverse
//! pass. Gradients are accumulated, so shared subexpressions are handled.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::ParameterStore;
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    SelectPerRow(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    MeanOverRows(Var),
    MaxOverRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    NormalizeRows(Var, Vec<f64>),
    Conv1dK5(Var, Var, Var),
    MaskedLogSumExpRows(Var, Vec<bool>),
    CrossEntropy(Var, Vec<usize>, Tensor),
    BceWithLogits(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

macro_rules! shape_check {
    ($cond:expr, $($arg:tt)*) => {
        assert!($cond, "dimension error: {}", alloc::format!($($arg)*));
    };
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Distance of the recorded pass from the nearest point where it is
    /// not differentiable: a ReLU or abs input at zero, or a tie for a
    /// pooled maximum. Only nodes that carry gradients count; infinite when
    /// there are none.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in self.nodes.iter().filter(|n| n.requires_grad) {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    for &x in self.value(*a).data() {
                        margin = margin.min(math::abs(x));
                    }
                }
                Op::MaxOverRows(a, arg) => {
                    let t = self.value(*a);
                    // A column maximum that is a clamped ReLU zero stays
                    // constant; the ReLU inputs are checked on their own.
                    let clamped = matches!(self.nodes[a.0].op, Op::Relu(_));
                    for (j, &best) in arg.iter().enumerate() {
                        if clamped && t.get(best, j) == 0.0 {
                            continue;
                        }
                        for i in (0..t.rows()).filter(|&i| i != best) {
                            margin = margin.min(t.get(best, j) - t.get(i, j));
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Leaf whose gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Differentiable leaf.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf (data, masks, frozen features).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a stored parameter as a leaf. Repeated calls with the same name
    /// return the same node. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let p = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Parameters bound on this tape, by name.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(self.value(a), self.value(b)).unwrap_or_else(|e| panic!("{e}"));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        shape_check!(
            self.value(a).rows() == self.value(b).rows()
                && self.value(a).cols() == self.value(b).cols(),
            "{what}: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `a (m x n) + b (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        shape_check!(
            self.value(b).len() == n,
            "add_row: {m}x{n} + {:?}",
            self.value(b).shape()
        );
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(a).clone().with_requires_grad(false);
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &x) in row.iter_mut().zip(&bv) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddRow(a, b), rg)
    }

    /// `a (m x n) * s (m x 1)`: scales each row by its own scalar.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        shape_check!(
            self.value(s).len() == m,
            "mul_col: {m}x{n} * {:?}",
            self.value(s).shape()
        );
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(a).clone().with_requires_grad(false);
        for (row, &k) in out.data_mut().chunks_mut(n.max(1)).zip(&sv) {
            for o in row {
                *o *= k;
            }
        }
        let rg = self.rg(a) || self.rg(s);
        self.push(out, Op::MulCol(a, s), rg)
    }

    /// `a (m x n) * g (1 x n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        shape_check!(
            self.value(g).len() == n,
            "mul_row: {m}x{n} * {:?}",
            self.value(g).shape()
        );
        let gv = self.value(g).data().to_vec();
        let mut out = self.value(a).clone().with_requires_grad(false);
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &k) in row.iter_mut().zip(&gv) {
                *o *= k;
            }
        }
        let rg = self.rg(a) || self.rg(g);
        self.push(out, Op::MulRow(a, g), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddConst(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, tensor::relu, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, math::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, math::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = tensor::transpose(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .value(a)
            .clone()
            .with_requires_grad(false)
            .reshaped(vec![rows, cols])
            .unwrap_or_else(|e| panic!("{e}"));
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Channel-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            shape_check!(self.value(p).rows() == m, "concat_cols row mismatch");
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            shape_check!(self.value(p).cols() == n, "concat_rows column mismatch");
            out.extend_from_slice(self.value(p).data());
            m += self.value(p).rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(m, n, out), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        shape_check!(start + width <= n, "slice {start}+{width} of {n} columns");
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&t.row_slice(i)[start..start + width]);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, width, out), Op::SliceCols(a, start), rg)
    }

    /// Row `r` of the output is row `idx[r]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = Vec::with_capacity(idx.len() * n);
        for i in idx {
            match i {
                Some(r) => {
                    shape_check!(*r < t.rows(), "gather row {r} of {}", t.rows());
                    out.extend_from_slice(t.row_slice(*r));
                }
                None => out.extend(core::iter::repeat_n(0.0, n)),
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(idx.len(), n, out),
            Op::GatherRows(a, idx.to_vec()),
            rg,
        )
    }

    /// `out[i] = a[i, cols[i]]`, an `m x 1` column.
    pub fn select_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let t = self.value(a);
        shape_check!(cols.len() == t.rows(), "select_per_row length");
        let out: Vec<f64> = cols.iter().enumerate().map(|(i, &c)| t.get(i, c)).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(cols.len(), 1, out),
            Op::SelectPerRow(a, cols.to_vec()),
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::MeanAll(a), rg)
    }

    /// Per-row sums as an `m x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(out.len(), 1, out), Op::SumRows(a), rg)
    }

    /// Column means (mean over rows) as a `1 x n` row.
    pub fn mean_over_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &x) in out.iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, out), Op::MeanOverRows(a), rg)
    }

    /// Column-wise max over rows (symmetric pooling over a point set).
    pub fn max_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(m > 0, "max_pool over zero rows");
        let mut out = t.row_slice(0).to_vec();
        let mut arg = vec![0usize; n];
        for i in 1..m {
            for (j, &x) in t.row_slice(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, out), Op::MaxOverRows(a, arg), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = tensor::softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = tensor::log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Per-row standardisation with population variance; `eps` guards
    /// zero-variance rows.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        let mut inv = vec![0.0; m];
        for i in 0..m {
            let row = t.row_slice(i);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let s = 1.0 / math::sqrt(var + eps);
            inv[i] = s;
            for (o, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - mu) * s;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, out), Op::LayerNormRows(a, inv), rg)
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = t.row_slice(i);
            let nrm = math::sqrt(row.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            norms[i] = nrm;
            for (o, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = x / nrm;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, out), Op::NormalizeRows(a, norms), rg)
    }

    /// Same-padded kernel-5 convolution of every row; `kernel` is `1 x 5`,
    /// `bias` is `1 x 1`.
    pub fn conv1d_k5(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        shape_check!(self.value(kernel).len() == 5, "conv kernel must have 5 taps");
        shape_check!(self.value(bias).len() == 1, "conv bias must be scalar");
        let k = self.value(kernel).data();
        let taps = [k[0], k[1], k[2], k[3], k[4]];
        let out = tensor::conv1d_k5(self.value(x), &taps, self.value(bias).item());
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        self.push(out, Op::Conv1dK5(x, kernel, bias), rg)
    }

    /// `out[i] = log sum_{j : mask[i][j]} exp(a[i][j])` as an `m x 1` column.
    /// Rows with an empty mask yield `-inf` and receive no gradient.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        shape_check!(mask.len() == m * n, "mask size");
        let mut out = vec![f64::NEG_INFINITY; m];
        for i in 0..m {
            let row = t.row_slice(i);
            let mrow = &mask[i * n..(i + 1) * n];
            let mx = row
                .iter()
                .zip(mrow)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx.is_finite() {
                let s: f64 = row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &k)| k)
                    .map(|(&x, _)| math::exp(x - mx))
                    .sum();
                out[i] = mx + math::ln(s);
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::matrix(m, 1, out),
            Op::MaskedLogSumExpRows(a, mask.to_vec()),
            rg,
        )
    }

    /// Mean softmax cross-entropy of `logits` (m x C) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let t = self.value(logits);
        shape_check!(labels.len() == t.rows(), "cross_entropy labels");
        let ls = tensor::log_softmax_rows(t);
        let m = labels.len().max(1) as f64;
        let loss: f64 = labels.iter().enumerate().map(|(i, &c)| -ls.get(i, c)).sum::<f64>() / m;
        let probs = ls.map(math::exp);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            rg,
        )
    }

    /// Mean elementwise binary cross-entropy of sigmoid(`logits`) against
    /// `targets` in [0,1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Var {
        let t = self.value(logits);
        shape_check!(t.len() == targets.len(), "bce targets");
        let n = t.len().max(1) as f64;
        let loss: f64 = t
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + math::ln(1.0 + math::exp(-math::abs(x))))
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, targets.clone()),
            rg,
        )
    }

    /// Reverse sweep from a scalar node. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(g.reshaped(shape).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, tensor::matmul_nt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, tensor::matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for i in 0..g.rows() {
                        for (d, &x) in db.iter_mut().zip(g.row_slice(i)) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::matrix(1, n, db));
                }
            }
            Op::MulCol(a, s) => {
                let (m, n) = (g.rows(), g.cols());
                if self.rg(*a) {
                    let sv = self.value(*s).data();
                    let mut da = g.clone();
                    for (row, &k) in da.data_mut().chunks_mut(n.max(1)).zip(sv) {
                        for x in row {
                            *x *= k;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*s) {
                    let av = self.value(*a);
                    let ds: Vec<f64> = (0..m)
                        .map(|i| g.row_slice(i).iter().zip(av.row_slice(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *s, Tensor::matrix(m, 1, ds));
                }
            }
            Op::MulRow(a, gm) => {
                let n = g.cols();
                if self.rg(*a) {
                    let gv = self.value(*gm).data();
                    let mut da = g.clone();
                    for row in da.data_mut().chunks_mut(n.max(1)) {
                        for (x, &k) in row.iter_mut().zip(gv) {
                            *x *= k;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*gm) {
                    let av = self.value(*a);
                    let mut dg = vec![0.0; n];
                    for i in 0..g.rows() {
                        for ((d, &x), &y) in dg.iter_mut().zip(g.row_slice(i)).zip(av.row_slice(i)) {
                            *d += x * y;
                        }
                    }
                    self.accumulate(grads, *gm, Tensor::matrix(1, n, dg));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |x, e| x * e)),
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| x / v)),
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |x, v| {
                    if v > 0.0 {
                        x
                    } else if v < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| 2.0 * x * v)),
            Op::Transpose(a) => self.accumulate(grads, *a, tensor::transpose(g)),
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(shape).expect("reshape grad"));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(m, w, d));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.rg(p) {
                        let d = g.data()[offset * n..(offset + r) * n].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, n, d));
                    }
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (m, n) = (src.rows(), src.cols());
                let w = g.cols();
                let mut d = Tensor::zeros(m, n);
                for i in 0..m {
                    for j in 0..w {
                        d.set(i, start + j, g.get(i, j));
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let n = src.cols();
                let mut d = Tensor::zeros(src.rows(), n);
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = i {
                        let dst = &mut d.data_mut()[i * n..(i + 1) * n];
                        for (o, &x) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SelectPerRow(a, cols) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for (i, &c) in cols.iter().enumerate() {
                    d.set(i, c, g.data()[i]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(src.rows(), src.cols(), g.item()));
            }
            Op::MeanAll(a) => {
                let src = self.value(*a);
                let v = g.item() / src.len() as f64;
                self.accumulate(grads, *a, Tensor::full(src.rows(), src.cols(), v));
            }
            Op::SumRows(a) => {
                let src = self.value(*a);
                let (m, n) = (src.rows(), src.cols());
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    d.extend(core::iter::repeat_n(g.data()[i], n));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::MeanOverRows(a) => {
                let src = self.value(*a);
                let (m, n) = (src.rows(), src.cols());
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend(g.data().iter().map(|x| x / m as f64));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::MaxOverRows(a, arg) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for (j, &i) in arg.iter().enumerate() {
                    d.set(i, j, g.data()[j]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (y.rows(), y.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        d[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = (y.rows(), y.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let gs: f64 = gr.iter().sum();
                    for j in 0..n {
                        d[i * n + j] = gr[j] - math::exp(yr[j]) * gs;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::LayerNormRows(a, inv) => {
                let (m, n) = (y.rows(), y.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let gmean = gr.iter().sum::<f64>() / n as f64;
                    let gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                    for j in 0..n {
                        d[i * n + j] = inv[i] * (gr[j] - gmean - yr[j] * gy);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::NormalizeRows(a, norms) => {
                let (m, n) = (y.rows(), y.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        d[i * n + j] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::Conv1dK5(x, kernel, bias) => {
                let xv = self.value(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let k = self.value(*kernel).data();
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let gr = g.row_slice(i);
                        for t in 0..n {
                            for (kk, &w) in k.iter().enumerate() {
                                let src = t as isize + kk as isize - 2;
                                if src >= 0 && (src as usize) < n {
                                    dx[i * n + src as usize] += w * gr[t];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::matrix(m, n, dx));
                }
                if self.rg(*kernel) {
                    let mut dk = [0.0; 5];
                    for i in 0..m {
                        let gr = g.row_slice(i);
                        let xr = xv.row_slice(i);
                        for t in 0..n {
                            for (kk, dkv) in dk.iter_mut().enumerate() {
                                let src = t as isize + kk as isize - 2;
                                if src >= 0 && (src as usize) < n {
                                    *dkv += gr[t] * xr[src as usize];
                                }
                            }
                        }
                    }
                    let shape = self.value(*kernel).shape().to_vec();
                    let t = Tensor::new(shape, dk.to_vec()).expect("kernel grad");
                    self.accumulate(grads, *kernel, t);
                }
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, Tensor::scalar(g.sum()));
                }
            }
            Op::MaskedLogSumExpRows(a, mask) => {
                let src = self.value(*a);
                let (m, n) = (src.rows(), src.cols());
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let lse = y.data()[i];
                    if !lse.is_finite() {
                        continue;
                    }
                    for j in 0..n {
                        if mask[i * n + j] {
                            d[i * n + j] = g.data()[i] * math::exp(src.get(i, j) - lse);
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d));
            }
            Op::CrossEntropy(a, labels, probs) => {
                let m = labels.len().max(1) as f64;
                let mut d = probs.clone();
                for (i, &c) in labels.iter().enumerate() {
                    let v = d.get(i, c);
                    d.set(i, c, v - 1.0);
                }
                let s = g.item() / m;
                self.accumulate(grads, *a, d.map(|x| x * s));
            }
            Op::BceWithLogits(a, targets) => {
                let n = targets.len().max(1) as f64;
                let s = g.item() / n;
                let d = self
                    .value(*a)
                    .zip_map(targets, |x, t| (tensor::sigmoid(x) - t) * s);
                self.accumulate(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_subexpression_accumulates() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.add(x, x);
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::row(&[1.0, 2.0]));
        let c = tape.constant(Tensor::row(&[3.0, 4.0]));
        let p = tape.mul(x, c);
        let s = tape.sum(p);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn matmul_gradient_by_hand() {
        // d/dA sum(A B) = 1 * B^T
        let mut tape = Tape::new();
        let a = tape.var(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
        let s = tape.sum(c);
        let g = tape.backward(s);
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn layer_norm_zero_variance_row_is_finite() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::row(&[2.0, 2.0, 2.0]));
        let y = tape.layer_norm_rows(x, 1e-5);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert!(g.get(x).unwrap().is_finite());
    }

    #[test]
    fn masked_logsumexp_empty_row() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]));
        let y = tape.masked_logsumexp_rows(x, &[true, true, false, false]);
        let v = tape.value(y).data();
        assert!((v[0] - libm::log(libm::exp(1.0) + libm::exp(2.0))).abs() < 1e-12);
        assert_eq!(v[1], f64::NEG_INFINITY);
    }
}
