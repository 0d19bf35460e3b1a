use super::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{Error, Result};

const LAYERNORM_EPS: f64 = 1e-5;
const GELU_COEFF: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Select {
        x: Var,
        index: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert list for one forward/backward pass.
///
/// Nodes are appended in evaluation order, so every op's inputs precede it
/// and `backward` is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits a tensor shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf holding a copy of `tensor`; gradients are tracked iff
    /// the tensor's `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor {
            shape: tensor.shape.clone(),
            data: tensor.data.clone(),
            requires_grad: tensor.requires_grad,
            grad: None,
        };
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let value = Tensor {
            requires_grad: false,
            grad: None,
            ..tensor
        };
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let value = Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        };
        self.push(value, op)
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Dimension(format!(
                "{what} expects a matrix, got shape {other:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} × {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.push_derived(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Output shape for a trailing-dimension broadcast of `a` and `b`: one
    /// operand's shape must be a suffix of the other's.
    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.ends_with(sb) {
            Ok(sa.to_vec())
        } else if sb.ends_with(sa) {
            Ok(sb.to_vec())
        } else {
            Err(Error::Dimension(format!(
                "{what}: shapes {sa:?} and {sb:?} are not broadcastable"
            )))
        }
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, what)?;
        let numel: usize = shape.iter().product();
        let (da, db) = (self.data(a), self.data(b));
        let (na, nb) = (da.len(), db.len());
        let out = (0..numel).map(|i| f(da[i % na], db[i % nb])).collect();
        Ok(self.push_derived(shape, out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(shape, out, Op::Scale(x, factor), &[x])
    }

    /// ReLU; the subgradient at exactly zero is zero and NaN passes through.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(shape, out, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_SCALE * (v + GELU_COEFF * v * v * v)).tanh()))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(shape, out, Op::Gelu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let max = (0..n).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..n {
                    let e = (src[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    out[idx(i)] /= total;
                }
            }
        }
        Ok(self.push_derived(shape, out, Op::Softmax { x, axis }, &[x]))
    }

    /// Layer normalization over the last axis with ε = 1e-5.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::Dimension("layernorm of a scalar".into()))?;
        for (p, name) in [(gain, "gain"), (bias, "bias")] {
            if self.shape(p) != [width] {
                return Err(Error::Dimension(format!(
                    "layernorm {name} shape {:?} does not match feature width {width}",
                    self.shape(p)
                )));
            }
        }
        let rows = self.data(x).len() / width.max(1);
        let (src, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..width {
                let h = (row[c] - mean) * is;
                xhat[r * width + c] = h;
                out[r * width + c] = h * g[c] + b[c];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push_derived(shape, out, op, &[x, gain, bias]))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "mean axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        if n == 0 {
            return Err(Error::Dimension("mean over an empty axis".into()));
        }
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                for j in 0..inner {
                    out[o * inner + j] += src[(o * n + i) * inner + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push_derived(out_shape, out, Op::Mean { x, axis }, &[x]))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push_derived(Vec::new(), vec![total], Op::Sum(x), &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, classes) = self.matrix_dims(logits, "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let src = self.data(logits);
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_total = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - max - log_total).exp();
            }
            loss -= row[y] - max - log_total;
        }
        loss /= n as f64;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push_derived(Vec::new(), vec![loss], op, &[logits]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "transpose")?;
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push_derived(vec![c, r], out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.data(x).to_vec();
        Ok(self.push_derived(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::Dimension(format!(
                "row slice {start}..{} out of bounds for shape {shape:?}",
                start + len
            )));
        }
        let per_row: usize = shape[1..].iter().product();
        let out = self.data(x)[start * per_row..(start + len) * per_row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        Ok(self.push_derived(out_shape, out, Op::SliceRows { x, start }, &[x]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} out of bounds for {c} columns",
                start + len
            )));
        }
        let src = self.data(x);
        let out = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push_derived(vec![r, len], out, Op::SliceCols { x, start }, &[x]))
    }

    /// Concatenation along axis 0; trailing shapes must match.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?;
        let trailing = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(*first).is_empty() {
            return Err(Error::Dimension("concat_rows of scalars".into()));
        }
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != trailing[..] {
                return Err(Error::Dimension(format!(
                    "concat_rows: shape {s:?} incompatible with trailing {trailing:?}"
                )));
            }
            rows += s[0];
            out.extend_from_slice(self.data(p));
        }
        let mut shape = vec![rows];
        shape.extend(trailing);
        Ok(self.push_derived(shape, out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Concatenation of matrices along axis 1; row counts must match.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_cols of nothing".into()));
        }
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.matrix_dims(p, "concat_cols")?);
        }
        let rows = dims[0].0;
        if dims.iter().any(|&(r, _)| r != rows) {
            return Err(Error::Dimension(format!("concat_cols: row counts differ {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.data(p)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push_derived(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Element `index` of a vector as a rank-0 scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        if self.shape(x).len() != 1 || index >= self.data(x).len() {
            return Err(Error::Dimension(format!(
                "select index {index} invalid for shape {:?}",
                self.shape(x)
            )));
        }
        let v = self.data(x)[index];
        Ok(self.push_derived(Vec::new(), vec![v], Op::Select { x, index }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added into every
    /// participating node that requires grad, so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].value.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            propagate(&self.nodes, i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    /// Drops gradients stored on the tape's nodes.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }
}

fn needs(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].value.requires_grad
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}

/// Gradient of a broadcast operand: folds `g` (length of the output) onto an
/// operand of length `n` by the same modular indexing as the forward pass.
fn fold_broadcast(g: &[f64], n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &gi) in g.iter().enumerate() {
        out[i % n] += gi * f(i);
    }
    out
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let data = |v: Var| -> &[f64] { &nodes[v.0].value.data };
    let shape = |v: Var| -> &[usize] { &nodes[v.0].value.shape };
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (shape(a)[0], shape(a)[1]);
            let n = shape(b)[1];
            if needs(nodes, a) {
                accum(grads, a, matmul_nt_raw(g, data(b), m, n, k));
            }
            if needs(nodes, b) {
                accum(grads, b, matmul_tn_raw(data(a), g, m, k, n));
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if needs(nodes, v) {
                    accum(grads, v, fold_broadcast(g, data(v).len(), |_| 1.0));
                }
            }
        }
        &Op::Sub(a, b) => {
            if needs(nodes, a) {
                accum(grads, a, fold_broadcast(g, data(a).len(), |_| 1.0));
            }
            if needs(nodes, b) {
                accum(grads, b, fold_broadcast(g, data(b).len(), |_| -1.0));
            }
        }
        &Op::Mul(a, b) => {
            let (da, db) = (data(a), data(b));
            if needs(nodes, a) {
                accum(grads, a, fold_broadcast(g, da.len(), |j| db[j % db.len()]));
            }
            if needs(nodes, b) {
                accum(grads, b, fold_broadcast(g, db.len(), |j| da[j % da.len()]));
            }
        }
        &Op::Scale(x, factor) => {
            accum(grads, x, g.iter().map(|v| v * factor).collect());
        }
        &Op::Relu(x) => {
            let dx = g
                .iter()
                .zip(data(x))
                .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                .collect();
            accum(grads, x, dx);
        }
        &Op::Gelu(x) => {
            let dx = g
                .iter()
                .zip(data(x))
                .map(|(gi, &v)| {
                    let t = (GELU_SCALE * (v + GELU_COEFF * v * v * v)).tanh();
                    let du = GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * v * v);
                    gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                })
                .collect();
            accum(grads, x, dx);
        }
        &Op::Softmax { x, axis } => {
            let y = &nodes[i].value.data;
            let (outer, n, inner) = axis_split(shape(x), axis);
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + j;
                    let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..n {
                        dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            accum(grads, x, dx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let width = data(*gain).len();
            let rows = inv_std.len();
            let gv = data(*gain);
            if needs(nodes, *x) {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let span = r * width..(r + 1) * width;
                    let dxhat: Vec<f64> = g[span.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(&xhat[span.clone()]).map(|(a, b)| a * b).sum();
                    let scale = inv_std[r] / width as f64;
                    for c in 0..width {
                        let h = xhat[r * width + c];
                        dx[r * width + c] = scale * (width as f64 * dxhat[c] - sum_d - h * sum_dx);
                    }
                }
                accum(grads, *x, dx);
            }
            if needs(nodes, *gain) {
                accum(grads, *gain, fold_broadcast(g, width, |j| xhat[j]));
            }
            if needs(nodes, *bias) {
                accum(grads, *bias, fold_broadcast(g, width, |_| 1.0));
            }
        }
        &Op::Mean { x, axis } => {
            let (outer, n, inner) = axis_split(shape(x), axis);
            let mut dx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    for j in 0..inner {
                        dx[(o * n + k) * inner + j] = g[o * inner + j] / n as f64;
                    }
                }
            }
            accum(grads, x, dx);
        }
        &Op::Sum(x) => {
            accum(grads, x, vec![g[0]; data(x).len()]);
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let n = labels.len();
            let classes = probs.len() / n;
            let mut dx: Vec<f64> = probs.iter().map(|p| p * g[0] / n as f64).collect();
            for (r, &y) in labels.iter().enumerate() {
                dx[r * classes + y] -= g[0] / n as f64;
            }
            accum(grads, *logits, dx);
        }
        &Op::Transpose(x) => {
            let (r, c) = (shape(x)[0], shape(x)[1]);
            let mut dx = vec![0.0; r * c];
            for a in 0..r {
                for b in 0..c {
                    dx[a * c + b] = g[b * r + a];
                }
            }
            accum(grads, x, dx);
        }
        &Op::Reshape(x) => accum(grads, x, g.to_vec()),
        &Op::SliceRows { x, start } => {
            let per_row: usize = shape(x)[1..].iter().product();
            let mut dx = vec![0.0; data(x).len()];
            dx[start * per_row..start * per_row + g.len()].copy_from_slice(g);
            accum(grads, x, dx);
        }
        &Op::SliceCols { x, start } => {
            let (r, c) = (shape(x)[0], shape(x)[1]);
            let len = g.len() / r.max(1);
            let mut dx = vec![0.0; r * c];
            for a in 0..r {
                dx[a * c + start..a * c + start + len].copy_from_slice(&g[a * len..(a + 1) * len]);
            }
            accum(grads, x, dx);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = data(p).len();
                if needs(nodes, p) {
                    accum(grads, p, g[offset..offset + n].to_vec());
                }
                offset += n;
            }
        }
        Op::ConcatCols(parts) => {
            let rows = nodes[i].value.shape[0];
            let total = nodes[i].value.shape[1];
            let mut col = 0;
            for &p in parts {
                let c = shape(p)[1];
                if needs(nodes, p) {
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + col..r * total + col + c]);
                    }
                    accum(grads, p, dp);
                }
                col += c;
            }
        }
        &Op::Select { x, index } => {
            let mut dx = vec![0.0; data(x).len()];
            dx[index] = g[0];
            accum(grads, x, dx);
        }
    }
}
