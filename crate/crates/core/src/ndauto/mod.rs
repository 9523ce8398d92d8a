//! A small dense-tensor engine with tape-based reverse-mode autodiff.
//!
//! Every operation is recorded on a [`Tape`] as a node holding its forward
//! value and the ids of its inputs. [`Tape::backward`] walks the nodes in
//! exact reverse recording order and accumulates `d(root)/d(leaf)` into every
//! leaf created with `requires_grad`. A leaf used several times receives the
//! sum over all of its uses.
//!
//! Values are row-major `f64`. Any operation whose output is not finite
//! fails with [`TensorError::NonFinite`] instead of silently propagating.
//!
//! ```
//! use atss::ndauto::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod attention;
mod kernels;

pub use attention::{AttentionOutput, AttentionParams, LinearParams};

use thiserror::Error;

use kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc};

/// Floor applied to probabilities before taking the log in
/// [`Tape::cross_entropy`].
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?}")]
    InvalidShape { op: &'static str, shape: Vec<usize> },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("model width {width} is not divisible by {heads} heads")]
    HeadCount { width: usize, heads: usize },
    #[error("cross_entropy input is not a two-class distribution: {0:?}")]
    NotADistribution(Vec<f64>),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major tensor of `f64` with explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows, cols]` matrix.
    ///
    /// # Panics
    /// If the rows are ragged or empty.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows[0].len();
        assert!(cols > 0 && rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::InvalidShape {
                op,
                shape: self.shape.clone(),
            }),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    AddBias(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    SoftmaxRows(TensorId),
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanPoolRows(TensorId),
    ConcatRows(Vec<TensorId>),
    ConcatChannels(Vec<TensorId>),
    SliceCols(TensorId, usize, usize),
    Reshape(TensorId),
    Sum(TensorId),
    CrossEntropy(TensorId, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records operations for one forward pass and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Adds an input tensor. Leaves with `requires_grad` collect gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push_unchecked(value, Op::Leaf, requires_grad))
    }

    /// Trainable leaf.
    ///
    /// # Panics
    /// If `value` has a non-finite entry.
    pub fn param(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, true).expect("parameter must be finite")
    }

    /// Constant leaf; gradients are never propagated into it.
    ///
    /// # Panics
    /// If `value` has a non-finite entry.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false).expect("constant must be finite")
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[TensorId]) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn mismatch(&self, op: &'static str, a: TensorId, b: TensorId) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.value(a).shape.clone(),
            right: self.value(b).shape.clone(),
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        let value = Tensor {
            shape: vec![m, n],
            data: out,
        };
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.value(x).dims2("transpose")?;
        let src = &self.value(x).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor {
            shape: vec![c, r],
            data,
        };
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.value(a).shape != self.value(b).shape {
            return Err(self.mismatch("add", a, b));
        }
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x + y);
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// `[m,n] + [n]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(x).dims2("add_bias")?;
        if self.value(bias).shape != [n] {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = &self.value(bias).data;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_exact_mut(n).take(m) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.value(a).shape != self.value(b).shape {
            return Err(self.mismatch("mul", a, b));
        }
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x * y);
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        let src = self.value(x);
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| v * factor).collect(),
        };
        self.push("scale", value, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let src = self.value(x);
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Row-wise softmax of a `[m,n]` tensor, stabilized by subtracting each
    /// row's maximum.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(x).dims2("softmax_rows")?;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_exact_mut(n).take(m) {
            softmax_in_place(row);
        }
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        self.push("softmax_rows", value, Op::SoftmaxRows(x), &[x])
    }

    /// Per-row normalization to zero mean and unit population variance,
    /// followed by the affine map `gamma * x_hat + beta`.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let (m, n) = self.value(x).dims2("layer_norm")?;
        if self.value(gamma).shape != [n] {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).shape != [n] {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let src = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut normalized = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std[i] = rstd;
            for j in 0..n {
                let xh = (row[j] - mean) * rstd;
                normalized[i * n + j] = xh;
                data[i * n + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        };
        self.push("layer_norm", value, op, &[x, gamma, beta])
    }

    /// Column means of a `[T, d]` tensor, giving `[d]`.
    pub fn mean_pool_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(x).dims2("mean_pool_rows")?;
        let src = &self.value(x).data;
        let mut data = vec![0.0; n];
        for row in src.chunks_exact(n) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let inv = 1.0 / m as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        self.push("mean_pool_rows", Tensor::vector(data), Op::MeanPoolRows(x), &[x])
    }

    /// Stacks `[m_i, n]` tensors vertically into `[sum m_i, n]`.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let (_, n) = self.value(parts[0]).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, c) = self.value(p).dims2("concat_rows")?;
            if c != n {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += m;
            data.extend_from_slice(&self.value(p).data);
        }
        let value = Tensor {
            shape: vec![rows, n],
            data,
        };
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Joins tensors along the last axis: `[m, n_i] -> [m, sum n_i]`, or
    /// `[n_i] -> [sum n_i]` for vectors.
    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let first = self.value(parts[0]).shape.clone();
        let rows = match first[..] {
            [_] => 1,
            [m, _] => m,
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "concat_channels",
                    shape: first,
                })
            }
        };
        let widths: Vec<usize> = parts.iter().map(|&p| *self.value(p).shape.last().unwrap()).collect();
        for &p in parts {
            let s = &self.value(p).shape;
            if s.len() != first.len() || (s.len() == 2 && s[0] != rows) {
                return Err(self.mismatch("concat_channels", parts[0], p));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[i * w..(i + 1) * w]);
            }
        }
        let shape = if first.len() == 1 { vec![total] } else { vec![rows, total] };
        let value = Tensor { shape, data };
        self.push("concat_channels", value, Op::ConcatChannels(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a `[m, n]` tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (m, n) = self.value(x).dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: vec![m, n],
            });
        }
        let src = &self.value(x).data;
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let value = Tensor {
            shape: vec![m, w],
            data,
        };
        self.push("slice_cols", value, Op::SliceCols(x, start, end), &[x])
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let src = self.value(x);
        if shape.iter().product::<usize>() != src.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: src.len(),
            });
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: src.data.clone(),
        };
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let total = self.value(x).data.iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Two-class cross-entropy `-y ln p1 - (1-y) ln p0` of a probability
    /// vector `[p0, p1]`; probabilities are clamped at [`LOG_CLAMP`].
    pub fn cross_entropy(&mut self, probs: TensorId, label: usize) -> Result<TensorId> {
        if label > 1 {
            return Err(TensorError::InvalidLabel(label));
        }
        let p = &self.value(probs).data;
        let is_dist = p.len() == 2
            && p.iter().all(|&v| (0.0..=1.0).contains(&v))
            && (p[0] + p[1] - 1.0).abs() <= 1e-6;
        if !is_dist {
            return Err(TensorError::NotADistribution(p.clone()));
        }
        let loss = -p[label].max(LOG_CLAMP).ln();
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropy(probs, label), &[probs])
    }

    /// Back-propagates from a one-element `root`, adding `d(root)/d(leaf)` to
    /// every reachable `requires_grad` leaf. Calling it again without
    /// [`Tape::zero_grad`] accumulates.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot(self.value(root).shape.clone()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |id: TensorId| nodes[id.0].requires_grad;
        let val = |id: TensorId| &nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape[0], val(a).shape[1]);
                let n = val(b).shape[1];
                if wants(a) {
                    matmul_bt_acc(g, &val(b).data, slot(grads, a, m * k), m, n, k);
                }
                if wants(b) {
                    matmul_at_acc(&val(a).data, g, slot(grads, b, k * n), m, k, n);
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = (val(x).shape[0], val(x).shape[1]);
                let dst = slot(grads, x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] += g[j * r + i];
                    }
                }
            }
            &Op::Add(a, b) => {
                for id in [a, b] {
                    if wants(id) {
                        add_into(slot(grads, id, g.len()), g);
                    }
                }
            }
            &Op::AddBias(x, bias) => {
                if wants(x) {
                    add_into(slot(grads, x, g.len()), g);
                }
                if wants(bias) {
                    let n = val(bias).len();
                    let dst = slot(grads, bias, n);
                    for row in g.chunks_exact(n) {
                        add_into(dst, row);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let dst = slot(grads, a, g.len());
                    for ((d, gv), bv) in dst.iter_mut().zip(g).zip(&val(b).data) {
                        *d += gv * bv;
                    }
                }
                if wants(b) {
                    let dst = slot(grads, b, g.len());
                    for ((d, gv), av) in dst.iter_mut().zip(g).zip(&val(a).data) {
                        *d += gv * av;
                    }
                }
            }
            &Op::Scale(x, factor) => {
                let dst = slot(grads, x, g.len());
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            &Op::Relu(x) => {
                let dst = slot(grads, x, g.len());
                for ((d, gv), xv) in dst.iter_mut().zip(g).zip(&val(x).data) {
                    if *xv > 0.0 {
                        *d += gv;
                    }
                }
            }
            &Op::SoftmaxRows(x) => {
                let n = node.value.shape[1];
                let dst = slot(grads, x, g.len());
                for ((d_row, g_row), y_row) in dst
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(node.value.data.chunks_exact(n))
                {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in d_row.iter_mut().zip(g_row).zip(y_row) {
                        *d += yv * (gv - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = node.value.shape[1];
                let gam = &val(*gamma).data;
                if wants(*gamma) {
                    let dst = slot(grads, *gamma, n);
                    for (g_row, xh_row) in g.chunks_exact(n).zip(normalized.chunks_exact(n)) {
                        for ((d, gv), xh) in dst.iter_mut().zip(g_row).zip(xh_row) {
                            *d += gv * xh;
                        }
                    }
                }
                if wants(*beta) {
                    let dst = slot(grads, *beta, n);
                    for g_row in g.chunks_exact(n) {
                        add_into(dst, g_row);
                    }
                }
                if wants(*x) {
                    let dst = slot(grads, *x, g.len());
                    let mut dxh = vec![0.0; n];
                    for (i, rstd) in inv_std.iter().enumerate() {
                        let g_row = &g[i * n..(i + 1) * n];
                        let xh_row = &normalized[i * n..(i + 1) * n];
                        for j in 0..n {
                            dxh[j] = g_row[j] * gam[j];
                        }
                        let mean_dxh = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dxh_xh = dxh.iter().zip(xh_row).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dst[i * n + j] += rstd * (dxh[j] - mean_dxh - xh_row[j] * mean_dxh_xh);
                        }
                    }
                }
            }
            &Op::MeanPoolRows(x) => {
                let (m, n) = (val(x).shape[0], val(x).shape[1]);
                let inv = 1.0 / m as f64;
                let dst = slot(grads, x, m * n);
                for row in dst.chunks_exact_mut(n) {
                    for (d, gv) in row.iter_mut().zip(g) {
                        *d += gv * inv;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if wants(p) {
                        add_into(slot(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatChannels(parts) => {
                let total = *node.value.shape.last().unwrap();
                let rows = node.value.len() / total;
                let mut col = 0;
                for &p in parts {
                    let w = *val(p).shape.last().unwrap();
                    if wants(p) {
                        let dst = slot(grads, p, rows * w);
                        for i in 0..rows {
                            add_into(&mut dst[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    }
                    col += w;
                }
            }
            &Op::SliceCols(x, start, end) => {
                let (m, n) = (val(x).shape[0], val(x).shape[1]);
                let w = end - start;
                let dst = slot(grads, x, m * n);
                for i in 0..m {
                    add_into(&mut dst[i * n + start..i * n + end], &g[i * w..(i + 1) * w]);
                }
            }
            &Op::Reshape(x) => add_into(slot(grads, x, g.len()), g),
            &Op::Sum(x) => {
                let len = val(x).len();
                for d in slot(grads, x, len) {
                    *d += g[0];
                }
            }
            &Op::CrossEntropy(probs, label) => {
                let p = val(probs).data[label];
                if p > LOG_CLAMP {
                    slot(grads, probs, 2)[label] -= g[0] / p;
                } else {
                    slot(grads, probs, 2);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: TensorId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
