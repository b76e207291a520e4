//! The Wengert tape: forward op recording and reverse-mode gradient replay.

use super::{Result, Tensor, TensorError};

/// Handle to a tensor stored on a [`Tape`]. Only valid for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

/// One recorded operation, with enough saved state to replay backward.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    Neg { x: TensorId },
    AddBias { x: TensorId, bias: TensorId },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    Relu { x: TensorId },
    Gelu { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Pool { x: TensorId, mode: PoolMode, axis: usize, argmax: Vec<usize> },
    Conv1d { x: TensorId, kernels: TensorId, bias: TensorId },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    ConcatVec { parts: Vec<TensorId> },
    SliceRows { x: TensorId, start: usize, count: usize },
    SliceCols { x: TensorId, start: usize, count: usize },
    Embed { table: TensorId, tokens: Vec<usize> },
    Sum { x: TensorId },
    Dot { a: TensorId, b: TensorId },
    CosineSim { a: TensorId, b: TensorId },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Neg { .. } => "neg",
        Op::AddBias { .. } => "add_bias",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Relu { .. } => "relu",
        Op::Gelu { .. } => "gelu",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Pool { mode: PoolMode::Max, .. } => "pool_max",
        Op::Pool { mode: PoolMode::Mean, .. } => "pool_mean",
        Op::Conv1d { .. } => "conv1d",
        Op::ConcatRows { .. } => "concat_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ConcatVec { .. } => "concat_vec",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::Embed { .. } => "embed",
        Op::Sum { .. } => "sum",
        Op::Dot { .. } => "dot",
        Op::CosineSim { .. } => "cosine_sim",
    }
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of executed operations. Node order is topological by
/// construction: an op's inputs always precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Test hook: scale the backward contributions of every op with this
    /// name, deliberately corrupting its gradient rule.
    corrupt: Option<(String, f64)>,
}

// ── raw f64 kernels ─────────────────────────────────────────────────

/// C[m×n] = A[m×k] · B[k×n].
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C[m×k] = A[m×n] · B[k×n]ᵀ — rows of A dotted with rows of B.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * k + p] = s;
        }
    }
    out
}

/// C[k×n] = A[m×k]ᵀ · B[m×n].
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Standard normal CDF, via the exact error function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Iterate over the slices of a rank-≤2 tensor along `axis`.
/// Yields (start, stride, len) triples addressing each slice.
fn axis_slices(shape: &[usize], axis: usize) -> Vec<(usize, usize, usize)> {
    match shape {
        [n] => vec![(0, 1, *n)],
        [r, c] => {
            if axis == 0 {
                // slices are columns
                (0..*c).map(|j| (j, *c, *r)).collect()
            } else {
                (0..*r).map(|i| (i * c, 1, *c)).collect()
            }
        }
        _ => unreachable!("axis_slices is only called for rank 1 and 2"),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register a leaf tensor. Gradients flow into it iff `requires_grad`
    /// was set on the tensor.
    pub fn input(&mut self, tensor: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        id
    }

    /// Scalar constant leaf (no gradient).
    pub fn constant(&mut self, v: f64) -> TensorId {
        self.input(Tensor::scalar(v))
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Forward value of a scalar node.
    pub fn scalar(&self, id: TensorId) -> f64 {
        self.nodes[id.0].tensor.scalar_value()
    }

    /// Gradient accumulated into `id` by the last `backward` call, if any.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Gradient of `id`, with zeros for nodes the loss never touched.
    pub fn grad_or_zeros(&self, id: TensorId) -> Vec<f64> {
        let t = &self.nodes[id.0].tensor;
        t.grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Outputs of every softmax recorded on the tape, with the softmax axis.
    /// Used by tests asserting that attention rows sum to one.
    pub fn softmax_nodes(&self) -> Vec<(TensorId, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Softmax { axis, .. } => Some((TensorId(i), axis)),
                _ => None,
            })
            .collect()
    }

    /// Deliberately scale every backward contribution of the op named
    /// `op_name` (e.g. "matmul") by `factor`. Gradient checks must detect
    /// the corruption; this exists only to prove they do.
    pub fn corrupt_gradient(&mut self, op_name: &str, factor: f64) {
        self.corrupt = Some((op_name.to_string(), factor));
    }

    /// Outputs of every cosine-similarity op on the tape. Used by tests
    /// that must keep finite-difference steps away from hinge kinks.
    pub fn cosine_nodes(&self) -> Vec<TensorId> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::CosineSim { .. } => Some(TensorId(i)),
                _ => None,
            })
            .collect()
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tensor.requires_grad())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[TensorId]) -> Result<TensorId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name(&op) });
        }
        let mut tensor = Tensor::new(shape, data)?;
        if self.any_requires_grad(inputs) {
            tensor = tensor.with_grad();
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { tensor, op });
        Ok(id)
    }

    // ── ops ─────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 {
            return Err(TensorError::Rank { op: "matmul", expected: 2, shape: sa.to_vec() });
        }
        if sb.len() != 2 {
            return Err(TensorError::Rank { op: "matmul", expected: 2, shape: sb.to_vec() });
        }
        if sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(self.data(a), self.data(b), m, k, n);
        self.push(vec![m, n], out, Op::Matmul { a, b }, &[a, b])
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "transpose", expected: 2, shape: s.to_vec() });
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_raw(self.data(x), r, c);
        self.push(vec![c, r], out, Op::Transpose { x }, &[x])
    }

    fn zip_same_shape(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op: name, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let shape = sa.to_vec();
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.data(x).iter().map(|&v| v * c).collect();
        self.push(shape, out, Op::Scale { x, c }, &[x])
    }

    pub fn neg(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.data(x).iter().map(|&v| -v).collect();
        self.push(shape, out, Op::Neg { x }, &[x])
    }

    /// `x[n×d] + bias[d]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 {
            return Err(TensorError::Rank { op: "add_bias", expected: 2, shape: sx.to_vec() });
        }
        if sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::ShapeMismatch { op: "add_bias", lhs: sx.to_vec(), rhs: sb.to_vec() });
        }
        let (n, d) = (sx[0], sx[1]);
        let bdata = self.data(bias);
        let mut out = Vec::with_capacity(n * d);
        for row in self.data(x).chunks_exact(d) {
            out.extend(row.iter().zip(bdata).map(|(&v, &b)| v + b));
        }
        self.push(vec![n, d], out, Op::AddBias { x, bias }, &[x, bias])
    }

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let out: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        self.push(shape, out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    /// Hinge: max(0, x). The subgradient at exactly zero is taken as zero.
    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    /// GeLU with the exact Gaussian CDF: x·Φ(x).
    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        self.unary(x, |v| v * normal_cdf(v), Op::Gelu { x })
    }

    /// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() > 2 {
            return Err(TensorError::Rank { op: "softmax", expected: 2, shape });
        }
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "softmax", axis, shape });
        }
        let xd = self.data(x).to_vec();
        let mut out = vec![0.0; xd.len()];
        for (start, stride, len) in axis_slices(&shape, axis) {
            let idx = |i: usize| start + i * stride;
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(xd[idx(i)]);
            }
            let mut denom = 0.0;
            for i in 0..len {
                let e = (xd[idx(i)] - max).exp();
                out[idx(i)] = e;
                denom += e;
            }
            for i in 0..len {
                out[idx(i)] /= denom;
            }
        }
        self.push(shape, out, Op::Softmax { x, axis }, &[x])
    }

    /// Per-row layer normalization with affine parameters:
    /// `γ ⊙ (x − μ)/√(σ² + eps) + β`.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let (rows, d) = match sx.as_slice() {
            [d] => (1, *d),
            [r, d] => (*r, *d),
            _ => return Err(TensorError::Rank { op: "layer_norm", expected: 2, shape: sx }),
        };
        for (id, name) in [(gamma, "gamma"), (beta, "beta")] {
            let s = self.shape(id);
            if s != [d] {
                let _ = name;
                return Err(TensorError::ShapeMismatch { op: "layer_norm", lhs: sx.clone(), rhs: s.to_vec() });
            }
        }
        let xd = self.data(x).to_vec();
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let mut out = Vec::with_capacity(rows * d);
        for row in xd.chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out.push(g[j] * (row[j] - mean) * inv + b[j]);
            }
        }
        self.push(sx, out, Op::LayerNorm { x, gamma, beta, eps }, &[x, gamma, beta])
    }

    /// Componentwise max or mean reduction of a rank-2 tensor along `axis`.
    /// Max records its argmax indices; ties go to the lowest index.
    pub fn pool(&mut self, x: TensorId, mode: PoolMode, axis: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "pool", expected: 2, shape: s });
        }
        if axis >= 2 {
            return Err(TensorError::InvalidAxis { op: "pool", axis, shape: s });
        }
        if s[axis] == 0 {
            return Err(TensorError::EmptyAxis { op: "pool", axis });
        }
        let (r, c) = (s[0], s[1]);
        let out_len = if axis == 0 { c } else { r };
        let reduce = s[axis];
        let xd = self.data(x);
        let mut out = vec![0.0; out_len];
        let mut argmax = vec![0usize; out_len];
        for o in 0..out_len {
            let at = |i: usize| if axis == 0 { xd[i * c + o] } else { xd[o * c + i] };
            match mode {
                PoolMode::Max => {
                    let mut best = at(0);
                    let mut best_i = 0;
                    for i in 1..reduce {
                        if at(i) > best {
                            best = at(i);
                            best_i = i;
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_i;
                }
                PoolMode::Mean => {
                    out[o] = (0..reduce).map(at).sum::<f64>() / reduce as f64;
                }
            }
        }
        self.push(vec![out_len], out, Op::Pool { x, mode, axis, argmax }, &[x])
    }

    /// Valid (unpadded) 1-D convolution over the row axis.
    /// `x[len×d_in]`, `kernels[w, d_in, d_out]`, `bias[d_out]` → `[len−w+1, d_out]`.
    pub fn conv1d(&mut self, x: TensorId, kernels: TensorId, bias: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernels).to_vec();
        if sx.len() != 2 {
            return Err(TensorError::Rank { op: "conv1d", expected: 2, shape: sx });
        }
        if sk.len() != 3 {
            return Err(TensorError::Rank { op: "conv1d", expected: 3, shape: sk });
        }
        let (len, d_in) = (sx[0], sx[1]);
        let (w, kd_in, d_out) = (sk[0], sk[1], sk[2]);
        if kd_in != d_in {
            return Err(TensorError::ShapeMismatch { op: "conv1d", lhs: sx, rhs: sk });
        }
        if self.shape(bias) != [d_out] {
            return Err(TensorError::ShapeMismatch { op: "conv1d", lhs: sk, rhs: self.shape(bias).to_vec() });
        }
        if len < w {
            return Err(TensorError::KernelWiderThanInput { len, width: w });
        }
        let out_len = len - w + 1;
        let xd = self.data(x);
        let kd = self.data(kernels);
        let bd = self.data(bias);
        let mut out = vec![0.0; out_len * d_out];
        for i in 0..out_len {
            let orow = &mut out[i * d_out..(i + 1) * d_out];
            orow.copy_from_slice(bd);
            for t in 0..w {
                let xrow = &xd[(i + t) * d_in..(i + t + 1) * d_in];
                for (ci, &xv) in xrow.iter().enumerate() {
                    let krow = &kd[(t * d_in + ci) * d_out..(t * d_in + ci + 1) * d_out];
                    for (o, &kv) in orow.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
        self.push(vec![out_len, d_out], out, Op::Conv1d { x, kernels, bias }, &[x, kernels, bias])
    }

    /// Stack rank-2 tensors of equal width on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        debug_assert!(!parts.is_empty());
        let d = self.shape(parts[0]).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 {
                return Err(TensorError::Rank { op: "concat_rows", expected: 2, shape: s.to_vec() });
            }
            if s[1] != d {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        self.push(vec![rows, d], out, Op::ConcatRows { parts: parts.to_vec() }, parts)
    }

    /// Concatenate rank-2 tensors of equal height side by side.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        debug_assert!(!parts.is_empty());
        let r = self.shape(parts[0])[0];
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 {
                return Err(TensorError::Rank { op: "concat_cols", expected: 2, shape: s.to_vec() });
            }
            if s[0] != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            for &p in parts {
                let c = self.shape(p)[1];
                let row = &self.data(p)[i * c..(i + 1) * c];
                out.extend_from_slice(row);
            }
        }
        self.push(vec![r, width], out, Op::ConcatCols { parts: parts.to_vec() }, parts)
    }

    /// Concatenate rank-1 tensors into one vector.
    pub fn concat_vec(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        debug_assert!(!parts.is_empty());
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(TensorError::Rank { op: "concat_vec", expected: 1, shape: s.to_vec() });
            }
            out.extend_from_slice(self.data(p));
        }
        let len = out.len();
        self.push(vec![len], out, Op::ConcatVec { parts: parts.to_vec() }, parts)
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, count: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "slice_rows", expected: 2, shape: s });
        }
        let (r, c) = (s[0], s[1]);
        if start + count > r {
            return Err(TensorError::SliceOutOfBounds { op: "slice_rows", start, end: start + count, extent: r });
        }
        let out = self.data(x)[start * c..(start + count) * c].to_vec();
        self.push(vec![count, c], out, Op::SliceRows { x, start, count }, &[x])
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, count: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "slice_cols", expected: 2, shape: s });
        }
        let (r, c) = (s[0], s[1]);
        if start + count > c {
            return Err(TensorError::SliceOutOfBounds { op: "slice_cols", start, end: start + count, extent: c });
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(r * count);
        for i in 0..r {
            out.extend_from_slice(&xd[i * c + start..i * c + start + count]);
        }
        self.push(vec![r, count], out, Op::SliceCols { x, start, count }, &[x])
    }

    /// Row lookup into an embedding table. The gradient scatters back to the
    /// used rows only.
    pub fn embed(&mut self, table: TensorId, tokens: &[usize]) -> Result<TensorId> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Rank { op: "embed", expected: 2, shape: s });
        }
        let (rows, d) = (s[0], s[1]);
        let td = self.data(table);
        let mut out = Vec::with_capacity(tokens.len() * d);
        for &tok in tokens {
            if tok >= rows {
                return Err(TensorError::TokenOutOfRange { id: tok, rows });
            }
            out.extend_from_slice(&td[tok * d..(tok + 1) * d]);
        }
        let l = tokens.len();
        self.push(vec![l, d], out, Op::Embed { table, tokens: tokens.to_vec() }, &[table])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let total: f64 = self.data(x).iter().sum();
        self.push(vec![1], vec![total], Op::Sum { x }, &[x])
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 || sa != sb {
            return Err(TensorError::ShapeMismatch { op: "dot", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).sum();
        self.push(vec![1], vec![s], Op::Dot { a, b }, &[a, b])
    }

    /// Cosine similarity of two vectors, as a scalar.
    pub fn cosine_sim(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 || sa != sb {
            return Err(TensorError::ShapeMismatch { op: "cosine_sim", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let dot: f64 = ad.iter().zip(bd).map(|(&x, &y)| x * y).sum();
        let na = ad.iter().map(|&x| x * x).sum::<f64>().sqrt();
        let nb = bd.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(TensorError::ZeroNorm);
        }
        self.push(vec![1], vec![dot / (na * nb)], Op::CosineSim { a, b }, &[a, b])
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients are summed into every
    /// node reachable from the loss that requires them; leaves the loss
    /// cannot reach keep a `None` grad (read them with [`Tape::grad_or_zeros`]).
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        {
            let t = &self.nodes[loss.0].tensor;
            if !t.is_scalar() {
                return Err(TensorError::NonScalarLoss { shape: t.shape().to_vec() });
            }
        }
        for node in &mut self.nodes {
            node.tensor.clear_grad();
        }
        *self.nodes[loss.0].tensor.grad_mut() = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = match self.nodes[i].tensor.grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            let mut contributions = self.vjp(&op, TensorId(i), &g);
            if let Some((name, factor)) = &self.corrupt {
                if name == op_name(&op) {
                    for (_, grad) in &mut contributions {
                        for v in grad.iter_mut() {
                            *v *= factor;
                        }
                    }
                }
            }
            for (input, grad) in contributions {
                self.accumulate(input, &grad);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, grad: &[f64]) {
        let t = &mut self.nodes[id.0].tensor;
        if !t.requires_grad() {
            return;
        }
        match t.grad_mut() {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(grad) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Vector-Jacobian product of one op: upstream grad `g` on `out`,
    /// returning the per-input contributions.
    fn vjp(&self, op: &Op, out: TensorId, g: &[f64]) -> Vec<(TensorId, Vec<f64>)> {
        match *op {
            Op::Leaf => Vec::new(),
            Op::Matmul { a, b } => {
                let sa = self.shape(a);
                let (m, k) = (sa[0], sa[1]);
                let n = self.shape(b)[1];
                let da = matmul_nt(g, self.data(b), m, n, k);
                let db = matmul_tn(self.data(a), g, m, k, n);
                vec![(a, da), (b, db)]
            }
            Op::Transpose { x } => {
                let s = self.shape(x);
                vec![(x, transpose_raw(g, s[1], s[0]))]
            }
            Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Sub { a, b } => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
            Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.data(b)).map(|(&gv, &bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(self.data(a)).map(|(&gv, &av)| gv * av).collect();
                vec![(a, da), (b, db)]
            }
            Op::Scale { x, c } => vec![(x, g.iter().map(|&v| v * c).collect())],
            Op::Neg { x } => vec![(x, g.iter().map(|&v| -v).collect())],
            Op::AddBias { x, bias } => {
                let d = self.shape(bias)[0];
                let mut db = vec![0.0; d];
                for row in g.chunks_exact(d) {
                    for (s, &v) in db.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                vec![(x, g.to_vec()), (bias, db)]
            }
            Op::Sigmoid { x } => {
                let y = self.data(out);
                let dx: Vec<f64> = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                vec![(x, dx)]
            }
            Op::Tanh { x } => {
                let y = self.data(out);
                let dx: Vec<f64> = g.iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
                vec![(x, dx)]
            }
            Op::Relu { x } => {
                let xd = self.data(x);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(x, dx)]
            }
            Op::Gelu { x } => {
                let xd = self.data(x);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| gv * (normal_cdf(xv) + xv * normal_pdf(xv)))
                    .collect();
                vec![(x, dx)]
            }
            Op::Softmax { x, axis } => {
                let y = self.data(out);
                let shape = self.shape(out).to_vec();
                let mut dx = vec![0.0; y.len()];
                for (start, stride, len) in axis_slices(&shape, axis) {
                    let idx = |i: usize| start + i * stride;
                    let mut gy = 0.0;
                    for i in 0..len {
                        gy += g[idx(i)] * y[idx(i)];
                    }
                    for i in 0..len {
                        dx[idx(i)] = y[idx(i)] * (g[idx(i)] - gy);
                    }
                }
                vec![(x, dx)]
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xd = self.data(x);
                let gd = self.data(gamma);
                let d = self.shape(gamma)[0];
                let rows = xd.len() / d;
                let mut dx = vec![0.0; xd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let mut mean_gy = 0.0;
                    let mut mean_gyx = 0.0;
                    for j in 0..d {
                        let gy = grow[j] * gd[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        mean_gy += gy;
                        mean_gyx += gy * xhat[j];
                    }
                    mean_gy /= d as f64;
                    mean_gyx /= d as f64;
                    for j in 0..d {
                        let gy = grow[j] * gd[j];
                        dx[r * d + j] = inv * (gy - mean_gy - xhat[j] * mean_gyx);
                    }
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            }
            Op::Pool { x, mode, axis, ref argmax } => {
                let s = self.shape(x);
                let (r, c) = (s[0], s[1]);
                let reduce = s[axis];
                let mut dx = vec![0.0; r * c];
                match mode {
                    PoolMode::Max => {
                        for (o, &am) in argmax.iter().enumerate() {
                            let flat = if axis == 0 { am * c + o } else { o * c + am };
                            dx[flat] += g[o];
                        }
                    }
                    PoolMode::Mean => {
                        let inv = 1.0 / reduce as f64;
                        for (o, &gv) in g.iter().enumerate() {
                            for i in 0..reduce {
                                let flat = if axis == 0 { i * c + o } else { o * c + i };
                                dx[flat] += gv * inv;
                            }
                        }
                    }
                }
                vec![(x, dx)]
            }
            Op::Conv1d { x, kernels, bias } => {
                let sx = self.shape(x);
                let sk = self.shape(kernels);
                let (d_in, w, d_out) = (sx[1], sk[0], sk[2]);
                let out_len = sx[0] - w + 1;
                let xd = self.data(x);
                let kd = self.data(kernels);
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut db = vec![0.0; d_out];
                for i in 0..out_len {
                    let grow = &g[i * d_out..(i + 1) * d_out];
                    for (s, &v) in db.iter_mut().zip(grow) {
                        *s += v;
                    }
                    for t in 0..w {
                        for ci in 0..d_in {
                            let xv = xd[(i + t) * d_in + ci];
                            let koff = (t * d_in + ci) * d_out;
                            let mut acc = 0.0;
                            for co in 0..d_out {
                                acc += grow[co] * kd[koff + co];
                                dk[koff + co] += grow[co] * xv;
                            }
                            dx[(i + t) * d_in + ci] += acc;
                        }
                    }
                }
                vec![(x, dx), (kernels, dk), (bias, db)]
            }
            Op::ConcatRows { ref parts } => {
                let mut contribs = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].tensor.numel();
                    contribs.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
                contribs
            }
            Op::ConcatCols { ref parts } => {
                let r = self.shape(out)[0];
                let total = self.shape(out)[1];
                let mut contribs = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    let mut dp = Vec::with_capacity(r * c);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    contribs.push((p, dp));
                    offset += c;
                }
                contribs
            }
            Op::ConcatVec { ref parts } => {
                let mut contribs = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].tensor.numel();
                    contribs.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
                contribs
            }
            Op::SliceRows { x, start, count } => {
                let s = self.shape(x);
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![0.0; r * c];
                dx[start * c..(start + count) * c].copy_from_slice(g);
                vec![(x, dx)]
            }
            Op::SliceCols { x, start, count } => {
                let s = self.shape(x);
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + count]
                        .copy_from_slice(&g[i * count..(i + 1) * count]);
                }
                vec![(x, dx)]
            }
            Op::Embed { table, ref tokens } => {
                let d = self.shape(table)[1];
                let mut dt = vec![0.0; self.nodes[table.0].tensor.numel()];
                for (pos, &tok) in tokens.iter().enumerate() {
                    for j in 0..d {
                        dt[tok * d + j] += g[pos * d + j];
                    }
                }
                vec![(table, dt)]
            }
            Op::Sum { x } => {
                let n = self.nodes[x.0].tensor.numel();
                vec![(x, vec![g[0]; n])]
            }
            Op::Dot { a, b } => {
                let da: Vec<f64> = self.data(b).iter().map(|&v| g[0] * v).collect();
                let db: Vec<f64> = self.data(a).iter().map(|&v| g[0] * v).collect();
                vec![(a, da), (b, db)]
            }
            Op::CosineSim { a, b } => {
                let ad = self.data(a);
                let bd = self.data(b);
                let na = ad.iter().map(|&x| x * x).sum::<f64>().sqrt();
                let nb = bd.iter().map(|&x| x * x).sum::<f64>().sqrt();
                let cos = self.data(out)[0];
                let g0 = g[0];
                let da: Vec<f64> = ad
                    .iter()
                    .zip(bd)
                    .map(|(&av, &bv)| g0 * (bv / (na * nb) - cos * av / (na * na)))
                    .collect();
                let db: Vec<f64> = ad
                    .iter()
                    .zip(bd)
                    .map(|(&av, &bv)| g0 * (av / (na * nb) - cos * bv / (nb * nb)))
                    .collect();
                vec![(a, da), (b, db)]
            }
        }
    }
}
