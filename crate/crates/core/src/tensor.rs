//! Dense row-major `f64` tensors and the numeric kernels the graph builds on.

use crate::error::{Error, Result};

/// A dense, row-major array of `f64` values.
///
/// An empty shape denotes a scalar holding one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Constructs without validation; callers guarantee `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    /// A row vector `[n]`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Leading dimension for a 2-D view; higher-rank tensors fold trailing axes.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rounds every element to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.data {
            *x = *x as f32 as f64;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = a · b (+ c if accumulate)` for row-major `a: m×k`, `b: k×n`.
///
/// `trans_a` / `trans_b` read the stored matrices as transposed, so `a` is
/// stored `k×m` when `trans_a` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: lengths checked above; strides describe in-bounds row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 4×4, stride-2, padding-1 convolution.
pub(crate) const KERNEL: usize = 4;
pub(crate) const STRIDE: usize = 2;
pub(crate) const PAD: usize = 1;

/// Unfolds `[b, c, h, w]` into rows `(b, oy, ox)` × columns `(c, ky, kx)`.
pub(crate) fn im2col(input: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / STRIDE, w / STRIDE);
    let cols = c * KERNEL * KERNEL;
    let mut out = vec![0.0; b * oh * ow * cols];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * cols;
                for ci in 0..c {
                    let plane = (bi * c + ci) * h * w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[row + (ci * KERNEL + ky) * KERNEL + kx] =
                                input[plane + iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back onto a `[b, c, h, w]` image.
pub(crate) fn col2im(cols: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / STRIDE, w / STRIDE);
    let ncols = c * KERNEL * KERNEL;
    let mut out = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * ncols;
                for ci in 0..c {
                    let plane = (bi * c + ci) * h * w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[plane + iy as usize * w + ix as usize] +=
                                cols[row + (ci * KERNEL + ky) * KERNEL + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[b, c, h, w]` → rows `(b, y, x)` × `c`.
pub(crate) fn nchw_to_rows(x: &[f64], b: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for (p, &v) in src.iter().enumerate() {
                out[(bi * hw + p) * c + ci] = v;
            }
        }
    }
    out
}

/// Inverse of [`nchw_to_rows`].
pub(crate) fn rows_to_nchw(x: &[f64], b: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for p in 0..hw {
            let src = &x[(bi * hw + p) * c..(bi * hw + p + 1) * c];
            for (ci, &v) in src.iter().enumerate() {
                out[(bi * c + ci) * hw + p] = v;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
