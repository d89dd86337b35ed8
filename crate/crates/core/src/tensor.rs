//! Dense row-major tensors and the numeric kernels shared by the value-level
//! API and the gradient tape.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape { op: "new", detail: format!("zero dimension in {shape:?}") });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "new",
                detail: format!("{shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    /// Builds a matrix from `f64` rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape { op: "from_rows", detail: "ragged rows".into() });
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
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

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape { op, detail: format!("expected a matrix, got {:?}", self.shape) }),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        Ok(Self::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs().to_f64_lossy()).fold(0.0, f64::max)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(a, b)| a.bits() == b.bits())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }
}

fn check_finite<T: Scalar>(x: &Tensor<T>, op: &str) -> Result<()> {
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("{op} input")));
    }
    Ok(())
}

pub(crate) mod kernels {
    use crate::scalar::Scalar;

    /// `a[m,k] * b[k,n]`
    pub fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut c = vec![T::zero(); m * n];
        for (arow, crow) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        c
    }

    /// `a[m,k] * b[n,k]^T`
    pub fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut c = Vec::with_capacity(m * n);
        for arow in a.chunks_exact(k) {
            for brow in b.chunks_exact(k) {
                c.push(dot(arow, brow));
            }
        }
        debug_assert_eq!(c.len(), m * n);
        c
    }

    /// `a[m,k]^T * b[m,n]`, giving `[k,n]`.
    pub fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut c = vec![T::zero(); k * n];
        for (arow, brow) in a.chunks_exact(k).zip(b.chunks_exact(n)).take(m) {
            for (&av, crow) in arow.iter().zip(c.chunks_exact_mut(n)) {
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        c
    }

    pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
        // four lanes keep the loop vectorizable with a fixed summation order
        let mut acc = [T::zero(); 4];
        let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            for l in 0..4 {
                acc[l] += x[l] * y[l];
            }
        }
        let mut tail = T::zero();
        for (&x, &y) in ra.iter().zip(rb) {
            tail += x * y;
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    pub fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = (v - max).exp();
            sum += *o;
        }
        let inv = T::one() / sum;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }

    pub fn gelu<T: Scalar>(x: T) -> T {
        let k = T::of((2.0 / std::f64::consts::PI).sqrt());
        let c = T::of(0.044715);
        let half = T::of(0.5);
        half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
    }

    pub fn gelu_grad<T: Scalar>(x: T) -> T {
        let k = T::of((2.0 / std::f64::consts::PI).sqrt());
        let c = T::of(0.044715);
        let half = T::of(0.5);
        let t = (k * (x + c * x * x * x)).tanh();
        half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
    }
}

/// `C = A B`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Shape { op: "matmul", detail: format!("[{m},{k}] x [{k2},{n}]") });
    }
    Tensor::new(vec![m, n], kernels::mm(&a.data, &b.data, m, k, n))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("softmax_rows")?;
    check_finite(x, "softmax_rows")?;
    let mut out = Tensor::zeros(x.shape());
    for (xr, or) in x.data.chunks_exact(n).zip(out.data.chunks_exact_mut(n)) {
        kernels::softmax_row(xr, or);
    }
    Ok(out)
}

pub(crate) struct LayerNormParts<T> {
    pub out: Vec<T>,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_parts<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> Result<LayerNormParts<T>> {
    let (m, n) = x.dims2("layer_norm")?;
    if gain.len() != n || shift.len() != n {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!("row width {n}, gain {}, shift {}", gain.len(), shift.len()),
        });
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut out = vec![T::zero(); m * n];
    let mut xhat = vec![T::zero(); m * n];
    let mut rstd = vec![T::zero(); m];
    for r in 0..m {
        let row = &x.data[r * n..(r + 1) * n];
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..n {
            let h = (row[j] - mean) * rs;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gain.data[j] + shift.data[j];
        }
    }
    Ok(LayerNormParts { out, xhat, rstd })
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let parts = layer_norm_parts(x, gain, shift, eps)?;
    Tensor::new(x.shape.clone(), parts.out)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::gelu)
}

fn check_rows(idx: &[usize], len: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(Error::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

fn check_distinct(idx: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    for &i in idx {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

pub fn gather_rows<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = x.dims2("gather_rows")?;
    check_rows(idx, n)?;
    let data = idx.iter().flat_map(|&i| x.data[i * c..(i + 1) * c].iter().copied()).collect();
    Tensor::new(vec![idx.len(), c], data)
}

/// Copy of `target` with row `idx[j]` replaced by row `j` of `src`.
pub fn scatter_rows<T: Scalar>(target: &Tensor<T>, src: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = target.dims2("scatter_rows")?;
    let (k, c2) = src.dims2("scatter_rows")?;
    if c != c2 || k != idx.len() {
        return Err(Error::Shape {
            op: "scatter_rows",
            detail: format!("target [{n},{c}], src [{k},{c2}], {} indices", idx.len()),
        });
    }
    check_rows(idx, n)?;
    check_distinct(idx, n)?;
    let mut out = target.clone();
    for (j, &i) in idx.iter().enumerate() {
        out.data[i * c..(i + 1) * c].copy_from_slice(src.row(j));
    }
    Ok(out)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    Ok(cross_entropy_parts(logits, labels)?.0)
}

pub(crate) fn cross_entropy_parts<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let (b, k) = logits.dims2("cross_entropy")?;
    if labels.len() != b {
        return Err(Error::Shape { op: "cross_entropy", detail: format!("{b} rows, {} labels", labels.len()) });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    check_finite(logits, "cross_entropy")?;
    let probs = softmax_rows(logits)?.data;
    let mut loss = T::zero();
    for (r, &l) in labels.iter().enumerate() {
        let row = &logits.data[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[l];
    }
    Ok((loss / T::of(b as f64), probs))
}
