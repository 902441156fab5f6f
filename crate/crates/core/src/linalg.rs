//! Dense row-major matrices and the handful of kernels the model needs,
//! each with its hand-written backward pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix. Vectors are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stacks the rows of several matrices with equal column counts.
    pub fn vstack(parts: &[&Matrix<T>]) -> Result<Self> {
        let cols = parts.iter().map(|m| m.cols).find(|&c| c > 0).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.rows > 0 && m.cols != cols {
                return Err(Error::dim("Matrix::vstack", cols, m.cols));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x (+ b)` for a single vector.
pub fn matvec<T: Scalar>(w: &Matrix<T>, x: &[T], b: Option<&[T]>) -> Result<Vec<T>> {
    if x.len() != w.cols {
        return Err(Error::dim("matvec", w.cols, x.len()));
    }
    let mut out: Vec<T> = (0..w.rows).map(|o| dot(w.row(o), x)).collect();
    if let Some(b) = b {
        for (y, &bi) in out.iter_mut().zip(b) {
            *y += bi;
        }
    }
    Ok(out)
}

/// Row-wise affine map `Y = X Wᵀ + b` with `X: n x in`, `W: out x in`.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    if x.cols != w.cols {
        return Err(Error::dim("linear", w.cols, x.cols));
    }
    let mut y = Matrix::zeros(x.rows, w.rows);
    for n in 0..x.rows {
        let xr = x.row(n);
        let yr = y.row_mut(n);
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(w.row(o), xr);
        }
        if let Some(b) = b {
            for (yo, &bo) in yr.iter_mut().zip(b.as_slice()) {
                *yo += bo;
            }
        }
    }
    Ok(y)
}

/// Backward of [`linear`]. Accumulates into `dw`/`db`; returns `dX` when asked.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    dy: &Matrix<T>,
    dw: &mut Matrix<T>,
    db: Option<&mut Matrix<T>>,
    want_dx: bool,
) -> Option<Matrix<T>> {
    for n in 0..x.rows {
        let xr = x.row(n);
        let dyr = dy.row(n);
        for (o, &g) in dyr.iter().enumerate() {
            if g != T::zero() {
                axpy(g, xr, dw.row_mut(o));
            }
        }
    }
    if let Some(db) = db {
        let dbs = db.as_mut_slice();
        for n in 0..dy.rows {
            for (b, &g) in dbs.iter_mut().zip(dy.row(n)) {
                *b += g;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = Matrix::zeros(x.rows, x.cols);
    for n in 0..x.rows {
        let dyr = dy.row(n);
        let dxr = dx.row_mut(n);
        for (o, &g) in dyr.iter().enumerate() {
            if g != T::zero() {
                axpy(g, w.row(o), dxr);
            }
        }
    }
    Some(dx)
}

/// Learned per-component gain and bias of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gain: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: Matrix::filled(1, d, T::one()),
            bias: Matrix::zeros(1, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gain: Matrix::zeros(1, d),
            bias: Matrix::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Matrix<T>, eps: T) -> Result<(Matrix<T>, LayerNormCache<T>)> {
        layer_norm(x, self.gain.as_slice(), self.bias.as_slice(), eps)
    }

    /// Accumulates into `grad` and returns `dX`.
    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Matrix<T>, grad: &mut LayerNormParams<T>) -> Matrix<T> {
        let LayerNormParams { gain, bias } = grad;
        layer_norm_backward(cache, self.gain.as_slice(), dy, gain.as_mut_slice(), bias.as_mut_slice())
    }
}

/// Saved statistics of a row-wise layer norm.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

/// `gain ⊙ (x − mean)/sqrt(var + eps) + bias` per row, with the biased variance.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let d = x.cols;
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim("layer_norm", d, gain.len().min(bias.len())));
    }
    let dn = T::from_usize(d).unwrap();
    let mut y = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for n in 0..x.rows {
        let xr = x.row(n);
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let hr = xhat.row_mut(n);
        for (h, &v) in hr.iter_mut().zip(xr) {
            *h = (v - mean) * is;
        }
        let yr = y.row_mut(n);
        for j in 0..d {
            yr[j] = gain[j] * xhat.get(n, j) + bias[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Backward of [`layer_norm`]; accumulates parameter gradients and returns `dX`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dy: &Matrix<T>,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Matrix<T> {
    let (rows, d) = dy.shape();
    let dn = T::from_usize(d).unwrap();
    let mut dx = Matrix::zeros(rows, d);
    let mut dxhat = vec![T::zero(); d];
    for n in 0..rows {
        let dyr = dy.row(n);
        let xh = cache.xhat.row(n);
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let sum_dxhat = dxhat.iter().copied().sum::<T>();
        let sum_dxhat_xhat = dot(&dxhat, xh);
        let is = cache.inv_std[n];
        let dxr = dx.row_mut(n);
        for j in 0..d {
            dxr[j] = is / dn * (dn * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Numerically stable `ln σ(y)`.
#[inline]
pub fn log_sigmoid<T: Scalar>(y: T) -> T {
    if y >= T::zero() {
        -(-y).exp().ln_1p()
    } else {
        y - y.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(y: T) -> T {
    if y >= T::zero() {
        T::one() / (T::one() + (-y).exp())
    } else {
        let e = y.exp();
        e / (T::one() + e)
    }
}
