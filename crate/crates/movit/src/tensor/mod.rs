//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! All values of one forward/backward pass live on a [`Tape`]; operations
//! return [`TensorId`] handles and record enough to run a single reverse
//! sweep in exact reverse execution order. The tape is generic over the
//! element type so the identical graph can run in `f32` for training and
//! in `f64` for finite-difference verification.

mod gradcheck;

pub use gradcheck::{central_difference_grad, grad_check};

use crate::error::{MovitError, Result};
use num_traits::Float;

/// Element type of a tape: `f32` or `f64`.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// A dense row-major tensor.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { x: TensorId, bias: TensorId },
    Affine { x: TensorId, mul: T },
    ScaleBy { x: TensorId, s: TensorId },
    Gelu { x: TensorId },
    Sigmoid { x: TensorId },
    Softmax { x: TensorId },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: T },
    SliceRows { x: TensorId, start: usize },
    SliceCols { x: TensorId, start: usize },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    SumAll { x: TensorId },
    MeanAll { x: TensorId },
    CrossEntropy { logits: TensorId, targets: Vec<usize> },
    /// Attention over constant (retrieved) keys/values. The key/value
    /// buffers are raw copies, never tape tensors, so no gradient can
    /// reach them by construction.
    MemoryAttention {
        queries: TensorId,
        keys: Vec<T>,
        values: Vec<T>,
        per_query: usize,
    },
}

struct Node<T> {
    tensor: Tensor<T>,
    op: Op<T>,
    /// True when this node or any ancestor requires gradients.
    needs_grad: bool,
}

/// Execution record of one forward pass. Dropping the tape drops every
/// tensor created during the pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            op,
            needs_grad,
        });
        id
    }

    /// A gradient-tracked input (model parameter or test variable).
    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>) -> Result<TensorId> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(MovitError::Contract(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let id = self.push(data, shape, Op::Leaf, true);
        self.nodes[id.0].tensor.requires_grad = true;
        Ok(id)
    }

    /// A constant input; gradients never propagate past it.
    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> Result<TensorId> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(MovitError::Contract(format!(
                "constant data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    pub fn data(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].tensor
    }

    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        match s {
            [r, c] => Ok((*r, *c)),
            _ => Err(MovitError::Contract(format!(
                "{op} expects a 2-d tensor, got shape {s:?}"
            ))),
        }
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Errors when any element of `id` is NaN or infinite.
    pub fn ensure_finite(&self, id: TensorId, context: &str) -> Result<()> {
        if self.data(id).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MovitError::NonFinite(context.to_string()))
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `a[m×k] · b[k×n] -> [m×n]`
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(MovitError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::MatMul { a, b }, needs))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(x, "transpose")?;
        let xd = self.data(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, vec![c, r], Op::Transpose { x }, needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(MovitError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Add { a, b }, needs))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(MovitError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Mul { a, b }, needs))
    }

    /// Adds `bias[d]` to every row of `x[..×d]`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [d] {
            return Err(MovitError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bd = self.data(bias).to_vec();
        let data: Vec<T> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % d])
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(data, shape, Op::AddBias { x, bias }, needs))
    }

    /// `mul·x + add`, elementwise with scalar constants.
    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> Result<TensorId> {
        let (m, a) = (T::from_f64(mul), T::from_f64(add));
        let data: Vec<T> = self.data(x).iter().map(|&v| m * v + a).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(data, shape, Op::Affine { x, mul: m }, needs))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.tensor(s).numel() != 1 {
            return Err(MovitError::Contract(format!(
                "scale_by expects a scalar multiplier, got shape {:?}",
                self.shape(s)
            )));
        }
        let sv = self.data(s)[0];
        let data: Vec<T> = self.data(x).iter().map(|&v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(data, shape, Op::ScaleBy { x, s }, needs))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| {
                let vf = v.as_f64();
                T::from_f64(0.5 * vf * (1.0 + gelu_inner(vf).tanh()))
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(data, shape, Op::Gelu { x }, needs))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(data, shape, Op::Sigmoid { x }, needs))
    }

    /// Softmax along the last axis, computed with max-subtraction.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| {
            MovitError::Contract("softmax expects a tensor with at least one axis".into())
        })?;
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            softmax_row(row);
        }
        let needs = self.needs(x);
        Ok(self.push(data, shape, Op::Softmax { x }, needs))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(MovitError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let eps_t = T::from_f64(eps);
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let (mean, inv_std) = row_moments(row, eps_t);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            data,
            shape,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps: eps_t,
            },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(x, "slice_rows")?;
        if start + len > r {
            return Err(MovitError::Contract(format!(
                "slice_rows {start}..{} out of bounds for {r} rows",
                start + len
            )));
        }
        let data = self.data(x)[start * c..(start + len) * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(data, vec![len, c], Op::SliceRows { x, start }, needs))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c {
            return Err(MovitError::Contract(format!(
                "slice_cols {start}..{} out of bounds for {c} cols",
                start + len
            )));
        }
        let xd = self.data(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(data, vec![r, len], Op::SliceCols { x, start }, needs))
    }

    /// Stacks 2-d tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(MovitError::Contract("concat_rows of zero parts".into()));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(MovitError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.data(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![rows, c],
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Joins 2-d tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(MovitError::Contract("concat_cols of zero parts".into()));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(MovitError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p)[1];
                let pd = self.data(p);
                data.extend_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![r, cols],
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: T = self.data(x).iter().copied().sum();
        let needs = self.needs(x);
        Ok(self.push(vec![s], vec![1], Op::SumAll { x }, needs))
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let n = T::from_f64(self.tensor(x).numel() as f64);
        let s: T = self.data(x).iter().copied().sum();
        let needs = self.needs(x);
        Ok(self.push(vec![s / n], vec![1], Op::MeanAll { x }, needs))
    }

    /// Mean softmax cross-entropy of `logits[b×c]` against class indices.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (b, c) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != b {
            return Err(MovitError::Contract(format!(
                "cross_entropy: {} targets for {b} rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(MovitError::Contract(format!(
                "cross_entropy: target {t} out of range for {c} classes"
            )));
        }
        let ld = self.data(logits);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &ld[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row
                .iter()
                .map(|&v| (v - max).exp())
                .fold(T::zero(), |acc, v| acc + v)
                .ln();
            total += -(row[t] - max - lse);
        }
        let loss = total / T::from_f64(b as f64);
        if !loss.is_finite() {
            return Err(MovitError::NonFinite("cross_entropy loss".into()));
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Scaled dot-product attention of `queries[t×d]` over per-query
    /// constant key/value sets (`per_query` pairs each, flattened row-major
    /// as `[t×per_query, d]`). Gradients flow to the queries only.
    pub fn memory_attention(
        &mut self,
        queries: TensorId,
        keys: Vec<T>,
        values: Vec<T>,
        per_query: usize,
    ) -> Result<TensorId> {
        let (t, d) = self.dims2(queries, "memory_attention")?;
        if per_query == 0 {
            return Err(MovitError::Contract(
                "memory_attention with zero retrieved pairs".into(),
            ));
        }
        if keys.len() != t * per_query * d || values.len() != t * per_query * d {
            return Err(MovitError::Contract(format!(
                "memory_attention: expected {} key/value floats, got {}/{}",
                t * per_query * d,
                keys.len(),
                values.len()
            )));
        }
        let qd = self.data(queries);
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let mut out = vec![T::zero(); t * d];
        let mut logits = vec![T::zero(); per_query];
        for qi in 0..t {
            let q = &qd[qi * d..(qi + 1) * d];
            for (j, l) in logits.iter_mut().enumerate() {
                let k = &keys[(qi * per_query + j) * d..(qi * per_query + j + 1) * d];
                *l = dot(q, k) * scale;
            }
            softmax_row(&mut logits);
            let o = &mut out[qi * d..(qi + 1) * d];
            for (j, &w) in logits.iter().enumerate() {
                let v = &values[(qi * per_query + j) * d..(qi * per_query + j + 1) * d];
                for (ov, &vv) in o.iter_mut().zip(v) {
                    *ov += w * vv;
                }
            }
        }
        let needs = self.needs(queries);
        Ok(self.push(
            out,
            vec![t, d],
            Op::MemoryAttention {
                queries,
                keys,
                values,
                per_query,
            },
            needs,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// gradient-requiring tensor reachable from the loss.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.tensor(loss).numel() != 1 {
            return Err(MovitError::Contract(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.nodes[loss.0].tensor.grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].tensor.grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].tensor.grad.take().unwrap();
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.step_back(i, &grad, &op);
            self.nodes[i].op = op;
            self.nodes[i].tensor.grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[T]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let t = &mut self.nodes[id.0].tensor;
        let g = t.grad.get_or_insert_with(|| vec![T::zero(); t.data.len()]);
        for (a, &b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    fn step_back(&mut self, node: usize, grad: &[T], op: &Op<T>) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bd = self.data(*b);
                    let mut bt = vec![T::zero(); k * n];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bd[i * n + j];
                        }
                    }
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let ad = self.data(*a);
                    let mut at = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = ad[i * k + j];
                        }
                    }
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.accumulate(*b, &db);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = grad[j * r + i];
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, grad);
                self.accumulate(*b, grad);
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<T> = grad.iter().zip(self.data(*b)).map(|(&g, &v)| g * v).collect();
                    self.accumulate(*a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<T> = grad.iter().zip(self.data(*a)).map(|(&g, &v)| g * v).collect();
                    self.accumulate(*b, &db);
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(*x, grad);
                if self.needs(*bias) {
                    let d = self.tensor(*bias).numel();
                    let mut db = vec![T::zero(); d];
                    for (i, &g) in grad.iter().enumerate() {
                        db[i % d] += g;
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::Affine { x, mul } => {
                let dx: Vec<T> = grad.iter().map(|&g| g * *mul).collect();
                self.accumulate(*x, &dx);
            }
            Op::ScaleBy { x, s } => {
                let sv = self.data(*s)[0];
                if self.needs(*x) {
                    let dx: Vec<T> = grad.iter().map(|&g| g * sv).collect();
                    self.accumulate(*x, &dx);
                }
                if self.needs(*s) {
                    let ds: T = grad
                        .iter()
                        .zip(self.data(*x))
                        .map(|(&g, &v)| g * v)
                        .fold(T::zero(), |acc, v| acc + v);
                    self.accumulate(*s, &[ds]);
                }
            }
            Op::Gelu { x } => {
                let dx: Vec<T> = grad
                    .iter()
                    .zip(self.data(*x))
                    .map(|(&g, &v)| g * T::from_f64(gelu_grad(v.as_f64())))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let out = &self.nodes[node].tensor.data;
                let dx: Vec<T> = grad
                    .iter()
                    .zip(out)
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Softmax { x } => {
                let out = &self.nodes[node].tensor.data;
                let d = *self.nodes[node].tensor.shape.last().unwrap();
                let mut dx = vec![T::zero(); out.len()];
                for r in 0..out.len() / d {
                    let s = &out[r * d..(r + 1) * d];
                    let g = &grad[r * d..(r + 1) * d];
                    let dot = s
                        .iter()
                        .zip(g)
                        .map(|(&sv, &gv)| sv * gv)
                        .fold(T::zero(), |acc, v| acc + v);
                    for j in 0..d {
                        dx[r * d + j] = s[j] * (g[j] - dot);
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xd = self.data(*x).to_vec();
                let gd = self.data(*gamma).to_vec();
                let d = *self.shape(*gamma).first().unwrap();
                let rows = xd.len() / d;
                let mut dx = vec![T::zero(); xd.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let d_t = T::from_f64(d as f64);
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let g = &grad[r * d..(r + 1) * d];
                    let (mean, inv_std) = row_moments(row, *eps);
                    let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![T::zero(); d];
                    for j in 0..d {
                        dgamma[j] += g[j] * xhat[j];
                        dbeta[j] += g[j];
                        dxhat[j] = g[j] * gd[j];
                    }
                    let sum_dxhat: T = dxhat.iter().copied().sum();
                    let sum_dxhat_xhat: T = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(&a, &b)| a * b)
                        .fold(T::zero(), |acc, v| acc + v);
                    for j in 0..d {
                        dx[r * d + j] = inv_std / d_t
                            * (d_t * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gamma, &dgamma);
                self.accumulate(*beta, &dbeta);
            }
            Op::SliceRows { x, start } => {
                let c = self.shape(*x)[1];
                let numel = self.tensor(*x).numel();
                let mut dx = vec![T::zero(); numel];
                dx[start * c..start * c + grad.len()].copy_from_slice(grad);
                self.accumulate(*x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let len = grad.len() / r;
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&grad[i * len..(i + 1) * len]);
                }
                self.accumulate(*x, &dx);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.tensor(p).numel();
                    let dp = grad[offset..offset + n].to_vec();
                    self.accumulate(p, &dp);
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let r = self.shape(parts[0])[0];
                let total_c = grad.len() / r;
                let mut col_off = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let mut dp = vec![T::zero(); r * pc];
                    for i in 0..r {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&grad[i * total_c + col_off..i * total_c + col_off + pc]);
                    }
                    self.accumulate(p, &dp);
                    col_off += pc;
                }
            }
            Op::SumAll { x } => {
                let dx = vec![grad[0]; self.tensor(*x).numel()];
                self.accumulate(*x, &dx);
            }
            Op::MeanAll { x } => {
                let n = self.tensor(*x).numel();
                let dx = vec![grad[0] / T::from_f64(n as f64); n];
                self.accumulate(*x, &dx);
            }
            Op::CrossEntropy { logits, targets } => {
                let (b, c) = (self.shape(*logits)[0], self.shape(*logits)[1]);
                let ld = self.data(*logits);
                let inv_b = T::from_f64(1.0 / b as f64);
                let mut dl = vec![T::zero(); b * c];
                for (i, &t) in targets.iter().enumerate() {
                    let mut row = ld[i * c..(i + 1) * c].to_vec();
                    softmax_row(&mut row);
                    for j in 0..c {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dl[i * c + j] = grad[0] * (row[j] - onehot) * inv_b;
                    }
                }
                self.accumulate(*logits, &dl);
            }
            Op::MemoryAttention {
                queries,
                keys,
                values,
                per_query,
            } => {
                let (t, d) = (self.shape(*queries)[0], self.shape(*queries)[1]);
                let qd = self.data(*queries);
                let kk = *per_query;
                let scale = T::from_f64(1.0 / (d as f64).sqrt());
                let mut dq = vec![T::zero(); t * d];
                let mut attn = vec![T::zero(); kk];
                let mut dlogit = vec![T::zero(); kk];
                for qi in 0..t {
                    let q = &qd[qi * d..(qi + 1) * d];
                    let g = &grad[qi * d..(qi + 1) * d];
                    for (j, a) in attn.iter_mut().enumerate() {
                        let k = &keys[(qi * kk + j) * d..(qi * kk + j + 1) * d];
                        *a = dot(q, k) * scale;
                    }
                    softmax_row(&mut attn);
                    // dL/da_j = g · v_j, then softmax jacobian, then dq += dlogit_j · k_j · scale
                    let mut mix = T::zero();
                    for (j, dl) in dlogit.iter_mut().enumerate() {
                        let v = &values[(qi * kk + j) * d..(qi * kk + j + 1) * d];
                        *dl = dot(g, v);
                        mix += attn[j] * *dl;
                    }
                    for j in 0..kk {
                        let coef = attn[j] * (dlogit[j] - mix) * scale;
                        let k = &keys[(qi * kk + j) * d..(qi * kk + j + 1) * d];
                        for (dqv, &kv) in dq[qi * d..(qi + 1) * d].iter_mut().zip(k) {
                            *dqv += coef * kv;
                        }
                    }
                }
                self.accumulate(*queries, &dq);
            }
        }
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x * y)
        .fold(T::zero(), |acc, v| acc + v)
}

/// Row-major `a[m×k] · b[k×n]`, accumulating along k in the middle loop.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .fold(T::zero(), |acc, v| acc + v)
        / n;
    (mean, T::one() / (var + eps).sqrt())
}

fn gelu_inner(x: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))
}

fn gelu_grad(x: f64) -> f64 {
    let inner = gelu_inner(x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = (2.0 / std::f64::consts::PI).sqrt() * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}
