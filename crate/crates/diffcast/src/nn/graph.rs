//! Reverse-mode autodiff over a per-step tape.
//!
//! Operations are recorded into an arena as they execute, so node order is
//! already topological; the backward pass walks the arena once in reverse.
//! The graph is rebuilt for every training step (dynamic tape). Every op
//! validates shapes up front and checks its output for NaN/Inf — a
//! non-finite intermediate is an error, not a silent state.
//!
//! Broadcasting is deliberately minimal: the right operand of `add`, `sub`
//! and `mul` may be a `1×n` row or a `1×1` scalar; everything else requires
//! equal shapes.

use super::tensor::{Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Multiply by a compile-time scalar constant.
    Scale(NodeId, f64),
    Exp(NodeId),
    Abs(NodeId),
    Gelu(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise normalization to mean 0, variance 1 (no affine).
    LayerNorm(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    /// Rectangular sub-block rows `r0..r1`, cols `c0..c1`.
    Slice(NodeId, usize, usize, usize, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Mean(NodeId),
    Sum(NodeId),
    /// Rotary transform of dimension pairs by position-dependent angles.
    Rope {
        input: NodeId,
        positions: Vec<f64>,
        base: f64,
    },
    /// Overlap-averaged reassembly of patch tokens into a series column.
    OverlapFold {
        input: NodeId,
        offsets: Vec<usize>,
        counts: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a node that is known to participate in the loss.
    pub fn expect(&self, id: NodeId) -> &Tensor {
        self.grads[id.0].as_ref().expect("node has no gradient")
    }
}

/// Dynamic computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Leaf that does not receive a gradient (inputs, targets, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, false)
    }

    /// Leaf that accumulates a gradient (model parameters).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, op: Op, value: Tensor) -> Result<NodeId, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite {
                op: name.to_string(),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => self.needs_grad(*a) || self.needs_grad(*b),
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Gelu(a)
            | Op::Softmax(a)
            | Op::LayerNorm(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Slice(a, ..)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::Rope { input: a, .. }
            | Op::OverlapFold { input: a, .. } => self.needs_grad(*a),
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => {
                parts.iter().any(|p| self.needs_grad(*p))
            }
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let value = self.value(a).map(|v| v * factor);
        self.push("scale", Op::Scale(a, factor), value)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", Op::Exp(a), value)
    }

    /// Elementwise |x|. The subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(a).map(f64::abs);
        self.push("abs", Op::Abs(a), value)
    }

    /// GELU in its tanh form.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push("gelu", Op::Gelu(a), value)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        require_matrix("softmax", x)?;
        let (r, c) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let out_row = &mut out.data_mut()[i * c..(i + 1) * c];
            for (o, &v) in out_row.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out_row.iter_mut() {
                *o /= sum;
            }
        }
        self.push("softmax", Op::Softmax(a), out)
    }

    /// Row-wise standardization: output rows have mean 0, variance 1
    /// (population variance, `1e-12` floor) with no affine applied.
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        require_matrix("layer_norm", x)?;
        let (r, c) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let out_row = &mut out.data_mut()[i * c..(i + 1) * c];
            for (o, &v) in out_row.iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        self.push("layer_norm", Op::LayerNorm(a), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        require_matrix("transpose", self.value(a))?;
        let value = self.value(a).transposed();
        self.push("transpose", Op::Transpose(a), value)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", Op::Reshape(a), value)
    }

    /// Rows `r0..r1` and columns `c0..c1` of a matrix node.
    pub fn slice(
        &mut self,
        a: NodeId,
        r0: usize,
        r1: usize,
        c0: usize,
        c1: usize,
    ) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        require_matrix("slice", x)?;
        if r1 > x.rows() || c1 > x.cols() || r0 >= r1 || c0 >= c1 {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape: x.shape().to_vec(),
                reason: format!("range rows {r0}..{r1}, cols {c0}..{c1} out of bounds"),
            });
        }
        let mut out = Tensor::zeros(&[r1 - r0, c1 - c0]);
        for i in r0..r1 {
            for j in c0..c1 {
                out.set(i - r0, j - c0, x.at(i, j));
            }
        }
        self.push("slice", Op::Slice(a, r0, r1, c0, c1), out)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            require_matrix("concat_rows", t)?;
            if t.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        self.push("concat_rows", Op::ConcatRows(parts.to_vec()), value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            require_matrix("concat_cols", t)?;
            if t.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(t.cols());
            cols += t.cols();
        }
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for i in 0..rows {
                for j in 0..w {
                    out.set(i, offset + j, t.at(i, j));
                }
            }
            offset += w;
        }
        self.push("concat_cols", Op::ConcatCols(parts.to_vec()), out)
    }

    /// Mean over all elements → 1×1 scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        let value = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.push("mean", Op::Mean(a), value)
    }

    /// Sum over all elements → 1×1 scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        let value = Tensor::scalar(x.data().iter().sum::<f64>());
        self.push("sum", Op::Sum(a), value)
    }

    /// Rotary position transform. Row `i` of the input is rotated in
    /// dimension pairs `(2j, 2j+1)` by `positions[i] * base^(-2j/d)`.
    pub fn rope(
        &mut self,
        a: NodeId,
        positions: &[f64],
        base: f64,
    ) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        require_matrix("rope", x)?;
        if x.cols() % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "rope",
                shape: x.shape().to_vec(),
                reason: "head dimension must be even".into(),
            });
        }
        if positions.len() != x.rows() {
            return Err(TensorError::InvalidShape {
                op: "rope",
                shape: x.shape().to_vec(),
                reason: format!("{} positions for {} rows", positions.len(), x.rows()),
            });
        }
        let value = rope_apply(x, positions, base, false);
        self.push(
            "rope",
            Op::Rope {
                input: a,
                positions: positions.to_vec(),
                base,
            },
            value,
        )
    }

    /// Reassemble patch tokens `(n_tok × p)` into an `out_len × 1` series,
    /// averaging values where tokens overlap. `offsets[i]` is the series
    /// index covered by the first element of token `i`; every series index
    /// must be covered by at least one token.
    pub fn overlap_fold(
        &mut self,
        a: NodeId,
        offsets: &[usize],
        out_len: usize,
    ) -> Result<NodeId, TensorError> {
        let x = self.value(a);
        require_matrix("overlap_fold", x)?;
        let p = x.cols();
        if offsets.len() != x.rows() {
            return Err(TensorError::InvalidShape {
                op: "overlap_fold",
                shape: x.shape().to_vec(),
                reason: format!("{} offsets for {} tokens", offsets.len(), x.rows()),
            });
        }
        let mut counts = vec![0.0; out_len];
        for &off in offsets {
            if off + p > out_len {
                return Err(TensorError::InvalidShape {
                    op: "overlap_fold",
                    shape: x.shape().to_vec(),
                    reason: format!("token at offset {off} exceeds length {out_len}"),
                });
            }
            for c in counts.iter_mut().skip(off).take(p) {
                *c += 1.0;
            }
        }
        if counts.iter().any(|&c| c == 0.0) {
            return Err(TensorError::InvalidShape {
                op: "overlap_fold",
                shape: x.shape().to_vec(),
                reason: "offsets leave uncovered series positions".into(),
            });
        }
        let mut out = vec![0.0; out_len];
        for (i, &off) in offsets.iter().enumerate() {
            for j in 0..p {
                out[off + j] += x.at(i, j);
            }
        }
        for (o, c) in out.iter_mut().zip(&counts) {
            *o /= c;
        }
        let value = Tensor::new(vec![out_len, 1], out)?;
        self.push(
            "overlap_fold",
            Op::OverlapFold {
                input: a,
                offsets: offsets.to_vec(),
                counts,
            },
            value,
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Visits each node exactly once in
    /// reverse arena (= reverse topological) order; deterministic for fixed
    /// inputs.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::InvalidShape {
                op: "backward",
                shape: self.value(loss).shape().to_vec(),
                reason: "loss must be a scalar node".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad && !matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.accumulate_parents(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, idx: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut add_grad = |id: NodeId, g: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                add_grad(*a, gout.matmul(&tb.transposed()).expect("matmul grad"));
                add_grad(*b, ta.transposed().matmul(gout).expect("matmul grad"));
            }
            Op::Add(a, b) => {
                add_grad(*a, gout.clone());
                add_grad(*b, collapse_to(gout, self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                add_grad(*a, gout.clone());
                add_grad(*b, collapse_to(&gout.map(|v| -v), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = broadcast_zip("mul_grad", gout, tb, |g, y| g * y).expect("mul grad");
                add_grad(*a, ga);
                let gb_full = broadcast_zip_lhs(gout, ta, |g, x| g * x);
                add_grad(*b, collapse_to(&gb_full, tb.shape()));
            }
            Op::Scale(a, factor) => add_grad(*a, gout.map(|v| v * factor)),
            Op::Exp(a) => {
                let y = &node.value;
                let g = zip_same(gout, y, |g, y| g * y);
                add_grad(*a, g);
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let g = zip_same(gout, x, |g, x| g * sign0(x));
                add_grad(*a, g);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let g = zip_same(gout, x, |g, x| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
                });
                add_grad(*a, g);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut g = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &gout.data()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    let out = &mut g.data_mut()[i * c..(i + 1) * c];
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                add_grad(*a, g);
            }
            Op::LayerNorm(a) => {
                let x = self.value(*a);
                let y = &node.value;
                let (r, c) = (x.rows(), x.cols());
                let mut g = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let xr = &x.data()[i * c..(i + 1) * c];
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &gout.data()[i * c..(i + 1) * c];
                    let mean = xr.iter().sum::<f64>() / c as f64;
                    let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let g_mean = gr.iter().sum::<f64>() / c as f64;
                    let gy_mean: f64 =
                        gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                    let out = &mut g.data_mut()[i * c..(i + 1) * c];
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gv - g_mean - yv * gy_mean);
                    }
                }
                add_grad(*a, g);
            }
            Op::Transpose(a) => add_grad(*a, gout.transposed()),
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                add_grad(*a, gout.clone().reshaped(shape).expect("reshape grad"));
            }
            Op::Slice(a, r0, r1, c0, c1) => {
                let parent = self.value(*a);
                let mut g = Tensor::zeros(parent.shape());
                for i in *r0..*r1 {
                    for j in *c0..*c1 {
                        g.set(i, j, gout.at(i - r0, j - c0));
                    }
                }
                add_grad(*a, g);
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (r, c) = (t.rows(), t.cols());
                    if self.nodes[p.0].requires_grad {
                        let mut g = Tensor::zeros(&[r, c]);
                        for i in 0..r {
                            for j in 0..c {
                                g.set(i, j, gout.at(row + i, j));
                            }
                        }
                        add_grad(p, g);
                    }
                    row += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let t = self.value(p);
                    let (r, c) = (t.rows(), t.cols());
                    if self.nodes[p.0].requires_grad {
                        let mut g = Tensor::zeros(&[r, c]);
                        for i in 0..r {
                            for j in 0..c {
                                g.set(i, j, gout.at(i, col + j));
                            }
                        }
                        add_grad(p, g);
                    }
                    col += c;
                }
            }
            Op::Mean(a) => {
                let parent = self.value(*a);
                let v = gout.item() / parent.len() as f64;
                add_grad(*a, Tensor::full(parent.shape(), v));
            }
            Op::Sum(a) => {
                let parent = self.value(*a);
                add_grad(*a, Tensor::full(parent.shape(), gout.item()));
            }
            Op::Rope {
                input,
                positions,
                base,
            } => {
                // Rotation is orthogonal: the adjoint rotates by the
                // negated angles.
                add_grad(*input, rope_apply(gout, positions, *base, true));
            }
            Op::OverlapFold {
                input,
                offsets,
                counts,
            } => {
                let parent = self.value(*input);
                let p = parent.cols();
                let mut g = Tensor::zeros(parent.shape());
                for (i, &off) in offsets.iter().enumerate() {
                    for j in 0..p {
                        g.set(i, j, gout.data()[off + j] / counts[off + j]);
                    }
                }
                add_grad(*input, g);
            }
        }
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: "expected a rank-2 tensor".into(),
        })
    }
}

/// Apply `f` elementwise where `b` may be the same shape as `a`, a `1×n`
/// row (broadcast over rows), or a `1×1` scalar.
fn broadcast_zip(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape() == b.shape() {
        return Ok(Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
        .expect("same shape"));
    }
    if b.is_scalar() {
        let s = b.item();
        return Ok(a.map(|x| f(x, s)));
    }
    if a.is_matrix() && b.is_matrix() && b.rows() == 1 && b.cols() == a.cols() {
        let c = a.cols();
        let mut out = Tensor::zeros(a.shape());
        for i in 0..a.rows() {
            for j in 0..c {
                out.set(i, j, f(a.at(i, j), b.data()[j]));
            }
        }
        return Ok(out);
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// `gout ⊙ a` where `a` is the full-shaped operand (used for the broadcast
/// side's gradient before collapsing).
fn broadcast_zip_lhs(gout: &Tensor, a: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(gout.shape(), a.shape());
    zip_same(gout, a, f)
}

fn zip_same(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

/// Sum `grad` down to `shape` (inverse of row/scalar broadcasting).
fn collapse_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let target: usize = shape.iter().product();
    if target == 1 {
        return Tensor::scalar(grad.data().iter().sum())
            .reshaped(shape.to_vec())
            .expect("scalar collapse");
    }
    // row broadcast: sum over rows
    let cols = shape[1];
    let mut out = Tensor::zeros(shape);
    for i in 0..grad.rows() {
        for j in 0..cols {
            out.data_mut()[j] += grad.at(i, j);
        }
    }
    out
}

fn rope_apply(x: &Tensor, positions: &[f64], base: f64, invert: bool) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let half = c / 2;
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..half {
            let theta = base.powf(-2.0 * j as f64 / c as f64);
            let mut angle = positions[i] * theta;
            if invert {
                angle = -angle;
            }
            let (sin, cos) = angle.sin_cos();
            let a = x.at(i, 2 * j);
            let b = x.at(i, 2 * j + 1);
            out.set(i, 2 * j, a * cos - b * sin);
            out.set(i, 2 * j + 1, a * sin + b * cos);
        }
    }
    out
}
