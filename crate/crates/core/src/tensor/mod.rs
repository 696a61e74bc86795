//! Dense `f32` tensors and the handful of kernels the network needs.
//!
//! All kernels are pure and accumulate in a fixed order, so a given build
//! produces bit-identical results for identical inputs. In particular each
//! output element of [`matmul`] is summed over the inner dimension in
//! increasing index order regardless of where the element sits in the
//! output, which is what makes the backbone locality tests exact.

mod rng;

pub use rng::{rng_uniform, Rng};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of vectors along the last axis.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Rows `start..end` of a matrix-like tensor (first axis).
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "row range {start}..{end} out of bounds for {n} rows"
            )));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self::new(shape, self.data[start * stride..end * stride].to_vec())
    }

    /// Concatenates tensors along the first axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Self::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::new(self.shape.clone(), data).and_then(check_finite("add"))
    }

    /// Adds `bias` to every vector along the last axis.
    pub fn add_bias(mut self, bias: &Tensor) -> Result<Self> {
        let d = self.last_dim();
        if bias.len() != d {
            return Err(Error::Dimension(format!(
                "bias of length {} for last axis {d}",
                bias.len()
            )));
        }
        for row in self.data.chunks_exact_mut(d) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        check_finite("add_bias")(self)
    }

    /// Per-channel `x * scale + shift` along the last axis.
    pub fn affine(mut self, scale: &Tensor, shift: &Tensor) -> Result<Self> {
        let d = self.last_dim();
        if scale.len() != d || shift.len() != d {
            return Err(Error::Dimension(format!(
                "affine parameters of length {}/{} for last axis {d}",
                scale.len(),
                shift.len()
            )));
        }
        for row in self.data.chunks_exact_mut(d) {
            for ((v, s), b) in row.iter_mut().zip(&scale.data).zip(&shift.data) {
                *v = *v * s + b;
            }
        }
        check_finite("affine")(self)
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
        self
    }

    pub fn sigmoid(mut self) -> Self {
        for v in &mut self.data {
            *v = sigmoid(*v);
        }
        self
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_finite(op: &'static str) -> impl Fn(Tensor) -> Result<Tensor> {
    move |t| {
        if t.data.iter().all(|v| v.is_finite()) {
            Ok(t)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// `out[m×p] = a[m×k] · b[k×p]`, row-major slices.
///
/// Rows are processed four at a time so each row of `b` is loaded once per
/// block, but every output element still accumulates `a[i][0]*b[0][j] +
/// a[i][1]*b[1][j] + ...` left to right from zero.
pub(crate) fn gemm(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    out.fill(0.0);
    let blocks = m / 4;
    for blk in 0..blocks {
        let i = blk * 4;
        let (o0, rest) = out[i * p..(i + 4) * p].split_at_mut(p);
        let (o1, rest) = rest.split_at_mut(p);
        let (o2, o3) = rest.split_at_mut(p);
        let (a0, a1, a2, a3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for kk in 0..k {
            let brow = &b[kk * p..(kk + 1) * p];
            let (x0, x1, x2, x3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for j in 0..p {
                let bv = brow[j];
                o0[j] += x0 * bv;
                o1[j] += x1 * bv;
                o2[j] += x2 * bv;
                o3[j] += x3 * bv;
            }
        }
    }
    for i in blocks * 4..m {
        let o = &mut out[i * p..(i + 1) * p];
        let ar = &a[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * p..(kk + 1) * p];
            let x = ar[kk];
            for j in 0..p {
                o[j] += x * brow[j];
            }
        }
    }
}

/// Matrix product of `a[m×k]` and `b[k×p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, p) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * p];
    gemm(&a.data, &b.data, m, k, p, &mut out);
    Tensor::new(vec![m, p], out).and_then(check_finite("matmul"))
}

/// Applies a `[k×p]` weight to every vector along the last axis of `x`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let k = x.last_dim();
    if w.rank() != 2 || w.shape[0] != k {
        return Err(Error::Dimension(format!(
            "linear map {:?} applied to {:?}",
            w.shape, x.shape
        )));
    }
    let (m, p) = (x.rows(), w.shape[1]);
    let mut out = vec![0.0; m * p];
    gemm(&x.data, &w.data, m, k, p, &mut out);
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = p;
    let y = Tensor::new(shape, out)?;
    match bias {
        Some(b) => y.add_bias(b),
        None => check_finite("linear")(y),
    }
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut y = check_finite("softmax input")(x.clone())?;
    let d = y.last_dim();
    for row in y.data.chunks_exact_mut(d) {
        softmax_in_place(row);
    }
    Ok(y)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

fn conv_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::Dimension(format!(
                    "kernel extent {kernel} exceeds input extent {input}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// 2-D cross-correlation of `x[H×W×Cin]` with `kernel[kh×kw×Cin×Cout]`.
///
/// `Same` padding pads zeros, splitting odd totals with the extra column on
/// the trailing side.
pub fn conv2d(x: &Tensor, kernel: &Tensor, stride: (usize, usize), padding: Padding) -> Result<Tensor> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Parameter(format!("stride must be positive, got {stride:?}")));
    }
    if x.rank() != 3 || kernel.rank() != 4 || kernel.shape[2] != x.shape[2] {
        return Err(Error::Dimension(format!(
            "conv2d of {:?} with kernel {:?}",
            x.shape, kernel.shape
        )));
    }
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, cout) = (kernel.shape[0], kernel.shape[1], kernel.shape[3]);
    let (ho, pad_top) = conv_geometry(h, kh, stride.0, padding)?;
    let (wo, pad_left) = conv_geometry(w, kw, stride.1, padding)?;
    let patch = kh * kw * cin;
    let positions = ho * wo;

    let mut out = vec![0.0; positions * cout];
    if kh == 1 && kw == 1 && stride == (1, 1) {
        gemm(&x.data, &kernel.data, positions, cin, cout, &mut out);
    } else {
        let mut cols = vec![0.0f32; positions * patch];
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut cols[(oy * wo + ox) * patch..(oy * wo + ox + 1) * patch];
                for ky in 0..kh {
                    let iy = (oy * stride.0 + ky) as isize - pad_top as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride.1 + kx) as isize - pad_left as isize;
                        let seg = &mut dst[(ky * kw + kx) * cin..(ky * kw + kx + 1) * cin];
                        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            let src = (iy as usize * w + ix as usize) * cin;
                            seg.copy_from_slice(&x.data[src..src + cin]);
                        }
                    }
                }
            }
        }
        gemm(&cols, &kernel.data, positions, patch, cout, &mut out);
    }
    Tensor::new(vec![ho, wo, cout], out).and_then(check_finite("conv2d"))
}

/// Moves each `block×block` spatial tile into channels, raster order within
/// the tile first, then the original channel.
pub fn space_to_depth(x: &Tensor, block: usize) -> Result<Tensor> {
    if block == 0 {
        return Err(Error::Parameter("block size must be positive".into()));
    }
    if x.rank() != 3 || x.shape[0] % block != 0 || x.shape[1] % block != 0 {
        return Err(Error::Dimension(format!(
            "space_to_depth({block}) of {:?}",
            x.shape
        )));
    }
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (ho, wo, co) = (h / block, w / block, c * block * block);
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (by, dy, bx, dx) = (y / block, y % block, xx / block, xx % block);
            let base = (by * wo + bx) * co + (dy * block + dx) * c;
            let src = (y * w + xx) * c;
            out[base..base + c].copy_from_slice(&x.data[src..src + c]);
        }
    }
    Tensor::new(vec![ho, wo, co], out)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, block: usize) -> Result<Tensor> {
    if block == 0 || x.rank() != 3 || x.shape[2] % (block * block) != 0 {
        return Err(Error::Dimension(format!(
            "depth_to_space({block}) of {:?}",
            x.shape
        )));
    }
    let (ho, wo, co) = (x.shape[0], x.shape[1], x.shape[2]);
    let (h, w, c) = (ho * block, wo * block, co / (block * block));
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (by, dy, bx, dx) = (y / block, y % block, xx / block, xx % block);
            let base = (by * wo + bx) * co + (dy * block + dx) * c;
            let dst = (y * w + xx) * c;
            out[dst..dst + c].copy_from_slice(&x.data[base..base + c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub const LAYER_NORM_EPS: f32 = 1e-6;

/// Normalizes every vector along the last axis to zero mean and unit
/// variance, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_dim();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Dimension(format!(
            "layer_norm parameters of length {}/{} for last axis {d}",
            gain.len(),
            bias.len()
        )));
    }
    let mut y = x.clone();
    for row in y.data.chunks_exact_mut(d) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
            *v = ((*v as f64 - mean) * inv) as f32 * g + b;
        }
    }
    check_finite("layer_norm")(y)
}
