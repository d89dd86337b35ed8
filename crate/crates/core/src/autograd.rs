//! Reverse-mode differentiation over an explicit tape.
//!
//! A [`Graph`] records every operation in evaluation order. Each record keeps
//! its input ids and whatever the backward rule needs, so identical forward
//! sequences produce identical tapes and [`Graph::backward`] replays them in
//! reverse.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, kernels, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
    ScatterRows { target: Var, src: Var, idx: Vec<usize> },
    AssembleRows(Vec<(Var, Vec<usize>)>),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Reshape(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    WeightedSum(Var, Tensor<T>),
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherElems(..) => "gather_elems",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::AssembleRows(..) => "assemble_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::Reshape(..) => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::SoftmaxRows(a)
            | Op::Gelu(a)
            | Op::GatherRows(a, _)
            | Op::GatherElems(a, _)
            | Op::MeanRows(a)
            | Op::Reshape(a)
            | Op::WeightedSum(a, _) => vec![*a],
            Op::SliceCols { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, shift, .. } => vec![*x, *gain, *shift],
            Op::ScatterRows { target, src, .. } => vec![*target, *src],
            Op::AssembleRows(parts) => parts.iter().map(|p| p.0).collect(),
            Op::ConcatCols(parts) => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// One tape entry as seen from outside: operation kind, inputs and output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TapeRecord {
    pub kind: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// The gradient tape. Leaves may borrow parameter tensors for the lifetime
/// `'p`, so building a graph never copies the parameter store.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn records(&self) -> Vec<TapeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| TapeRecord {
                kind: n.op.kind(),
                inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                output: i,
            })
            .collect()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.push(Cow::Owned(value), op)
    }

    /// Differentiable leaf owning its value.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(value), true)
    }

    /// Differentiable leaf borrowing its value.
    pub fn param_ref(&mut self, value: &'p Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(value), false)
    }

    fn leaf(&mut self, value: Cow<'p, Tensor<T>>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push_owned(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::Shape { op: "matmul_nt", detail: format!("[{m},{k}] x [{n},{k2}]^T") });
        }
        let data = kernels::mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push_owned(Tensor::new(vec![m, n], data)?, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape { op: "add", detail: format!("{:?} + {:?}", x.shape(), y.shape()) });
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push_owned(out, Op::Add(a, b)))
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row")?;
        if self.value(b).len() != n {
            return Err(Error::Shape {
                op: "add_row",
                detail: format!("row width {n}, bias {:?}", self.value(b).shape()),
            });
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, &v) in row.iter_mut().zip(bias) {
                *o += v;
            }
        }
        Ok(self.push_owned(out, Op::AddRow(x, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push_owned(out, Op::Scale(x, s))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(x))?;
        Ok(self.push_owned(out, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: T) -> Result<Var> {
        let parts = tensor::layer_norm_parts(self.value(x), self.value(gain), self.value(shift), eps)?;
        let out = Tensor::new(self.shape(x).to_vec(), parts.out)?;
        Ok(self.push_owned(out, Op::LayerNorm { x, gain, shift, xhat: parts.xhat, rstd: parts.rstd }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu(self.value(x));
        self.push_owned(out, Op::Gelu(x))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = tensor::gather_rows(self.value(x), idx)?;
        Ok(self.push_owned(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// `out.flat[i] = x.flat[idx[i]]`, reshaped to `shape`. Indices may repeat;
    /// the backward pass accumulates.
    pub fn gather_elems(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&index) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(Error::IndexOutOfRange { index, len: src.len() });
        }
        let data = idx.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push_owned(out, Op::GatherElems(x, idx)))
    }

    pub fn scatter_rows(&mut self, target: Var, src: Var, idx: &[usize]) -> Result<Var> {
        let out = tensor::scatter_rows(self.value(target), self.value(src), idx)?;
        Ok(self.push_owned(out, Op::ScatterRows { target, src, idx: idx.to_vec() }))
    }

    /// Builds an `[n_rows, cols]` matrix from parts, writing row `j` of a part
    /// to `rows[j]`. Every output row must be written exactly once.
    pub fn assemble_rows(&mut self, n_rows: usize, parts: Vec<(Var, Vec<usize>)>) -> Result<Var> {
        let cols = match parts.first() {
            Some((v, _)) => self.dims2(*v, "assemble_rows")?.1,
            None => return Err(Error::Shape { op: "assemble_rows", detail: "no parts".into() }),
        };
        let mut writes = vec![0u32; n_rows];
        let mut out = Tensor::zeros(&[n_rows, cols]);
        for (v, rows) in &parts {
            let (k, c) = self.dims2(*v, "assemble_rows")?;
            if c != cols || k != rows.len() {
                return Err(Error::Shape {
                    op: "assemble_rows",
                    detail: format!("part [{k},{c}] with {} rows into width {cols}", rows.len()),
                });
            }
            let src = self.value(*v);
            for (j, &r) in rows.iter().enumerate() {
                if r >= n_rows {
                    return Err(Error::IndexOutOfRange { index: r, len: n_rows });
                }
                writes[r] += 1;
                out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(src.row(j));
            }
        }
        if let Some(r) = writes.iter().position(|&w| w > 1) {
            return Err(Error::DuplicateIndex(r));
        }
        if let Some(r) = writes.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!("assemble_rows: row {r} never written")));
        }
        Ok(self.push_owned(out, Op::AssembleRows(parts)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::Shape { op: "slice_cols", detail: format!("[{start}, {}) of {n}", start + len) });
        }
        let src = self.value(x).data();
        let data = (0..m).flat_map(|r| src[r * n + start..r * n + start + len].iter().copied()).collect();
        Ok(self.push_owned(Tensor::new(vec![m, len], data)?, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&v) => self.dims2(v, "concat_cols")?.0,
            None => return Err(Error::Shape { op: "concat_cols", detail: "no parts".into() }),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::Shape { op: "concat_cols", detail: format!("{r} rows vs {m}") });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push_owned(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Column means, `[m,n] -> [1,n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "mean_rows")?;
        let src = self.value(x).data();
        let inv = T::one() / T::of(m as f64);
        let mut out = vec![T::zero(); n];
        for row in src.chunks_exact(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= inv;
        }
        Ok(self.push_owned(Tensor::new(vec![1, n], out)?, Op::MeanRows(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push_owned(out, Op::Reshape(x)))
    }

    /// Mean cross-entropy of `logits[b,k]` against `labels`, as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::cross_entropy_parts(self.value(logits), labels)?;
        Ok(self.push_owned(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
        ))
    }

    /// `sum(x * w)` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        if self.shape(x) != w.shape() {
            return Err(Error::Shape {
                op: "weighted_sum",
                detail: format!("{:?} vs {:?}", self.shape(x), w.shape()),
            });
        }
        let s = self.value(x).data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push_owned(Tensor::scalar(s), Op::WeightedSum(x, w)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be a scalar, got {:?}", self.shape(loss)),
            });
        }
        self.backward_from(loss, Tensor::full(self.shape(loss), T::one()))
    }

    /// Vector-Jacobian product seeded with `seed` at `output`.
    pub fn backward_from(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(output) {
            return Err(Error::Shape { op: "backward", detail: "seed shape differs from output".into() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<'p, T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += *d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2("matmul")?;
                let n = bv.shape()[1];
                if self.nodes[a.0].needs_grad {
                    acc(*a, Tensor::new(vec![m, k], kernels::mm_nt(gd, bv.data(), m, n, k))?);
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, Tensor::new(vec![k, n], kernels::mm_tn(av.data(), gd, m, k, n))?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2("matmul_nt")?;
                let n = bv.shape()[0];
                if self.nodes[a.0].needs_grad {
                    acc(*a, Tensor::new(vec![m, k], kernels::mm(gd, bv.data(), m, n, k))?);
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, Tensor::new(vec![n, k], kernels::mm_tn(gd, av.data(), m, n, k))?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let n = self.value(*b).len();
                let mut db = vec![T::zero(); n];
                for row in gd.chunks_exact(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*b, Tensor::new(self.shape(*b).to_vec(), db)?);
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * *s)),
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks_exact(n).zip(gd.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
                    let dot = kernels::dot(yr, gr);
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::LayerNorm { x, gain, shift, xhat, rstd } => {
                let n = self.value(*gain).len();
                let gv = self.value(*gain).data();
                let inv_n = T::one() / T::of(n as f64);
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dgain = vec![T::zero(); n];
                let mut dshift = vec![T::zero(); n];
                for (r, &rs) in rstd.iter().enumerate() {
                    let (hr, gr) = (&xhat[r * n..(r + 1) * n], &gd[r * n..(r + 1) * n]);
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dshift[j] += gr[j];
                    }
                    mean_dh *= inv_n;
                    mean_dh_h *= inv_n;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[r * n + j] = rs * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                acc(*gain, Tensor::new(self.shape(*gain).to_vec(), dgain)?);
                acc(*shift, Tensor::new(self.shape(*shift).to_vec(), dshift)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = xv.iter().zip(gd).map(|(&v, &d)| d * kernels::gelu_grad(v)).collect();
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::GatherRows(x, idx) => {
                let (n, c) = self.dims2(*x, "gather_rows")?;
                let mut dx = vec![T::zero(); n * c];
                for (j, &i) in idx.iter().enumerate() {
                    for (d, &v) in dx[i * c..(i + 1) * c].iter_mut().zip(&gd[j * c..(j + 1) * c]) {
                        *d += v;
                    }
                }
                acc(*x, Tensor::new(vec![n, c], dx)?);
            }
            Op::GatherElems(x, idx) => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&i, &v) in idx.iter().zip(gd) {
                    dx[i] += v;
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::ScatterRows { target, src, idx } => {
                let c = self.value(*target).cols();
                if self.nodes[target.0].needs_grad {
                    let mut dt = g.clone();
                    for &i in idx {
                        dt.data_mut()[i * c..(i + 1) * c].fill(T::zero());
                    }
                    acc(*target, dt);
                }
                if self.nodes[src.0].needs_grad {
                    acc(*src, tensor::gather_rows(g, idx)?);
                }
            }
            Op::AssembleRows(parts) => {
                for (v, rows) in parts {
                    if self.nodes[v.0].needs_grad {
                        acc(*v, tensor::gather_rows(g, rows)?);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims2(*x, "slice_cols")?;
                let len = g.cols();
                let mut dx = vec![T::zero(); m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                acc(*x, Tensor::new(vec![m, n], dx)?);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = self.dims2(p, "concat_cols")?;
                    if self.nodes[p.0].needs_grad {
                        let data = (0..m)
                            .flat_map(|r| gd[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        acc(p, Tensor::new(vec![m, w], data)?);
                    }
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims2(*x, "mean_rows")?;
                let inv = T::one() / T::of(m as f64);
                let dx = (0..m * n).map(|i| gd[i % n] * inv).collect();
                acc(*x, Tensor::new(vec![m, n], dx)?);
            }
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x))?),
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, k) = self.dims2(*logits, "cross_entropy")?;
                let scale = gd[0] / T::of(b as f64);
                let mut dl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dl[r * k + l] -= T::one();
                }
                for d in &mut dl {
                    *d *= scale;
                }
                acc(*logits, Tensor::new(vec![b, k], dl)?);
            }
            Op::WeightedSum(x, w) => acc(*x, w.map(|v| v * gd[0])),
        }
        Ok(())
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
