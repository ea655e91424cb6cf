//! Dense `f64` tensors and the handful of numerical kernels the networks need:
//! stride-1 cross-correlation, matrix products, 2x2 max pooling.
//!
//! Layout is always row-major and contiguous. Batched helpers treat the first
//! axis as the sample axis.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every extent is positive and that the
    /// buffer length equals the product of the extents.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::mismatch("Tensor::new", &[n], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a `rows x cols` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Config("ragged rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Result<Self> {
        Tensor::new(vec![1, values.len()], values.to_vec())
    }

    /// i.i.d. zero-mean Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            let z: f64 = rng.sample(StandardNormal);
            *v = z * std;
        }
        t
    }

    /// i.i.d. uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(lo..hi);
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Same buffer, new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::mismatch("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::mismatch(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice of sample `i` along the leading axis.
    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.data.len() / self.shape[0];
        &self.data[i * per..(i + 1) * per]
    }
}

/// Output-size policy for convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// No padding; output is `(h - m + 1) x (w - n + 1)`.
    Valid,
    /// Zero padding so the output keeps the input extent. An odd total pad puts
    /// the smaller half in front.
    Same,
}

impl ConvMode {
    /// Leading and trailing zero padding along one axis for a kernel extent `k`.
    pub fn padding(self, k: usize) -> (usize, usize) {
        match self {
            ConvMode::Valid => (0, 0),
            ConvMode::Same => ((k - 1) / 2, k / 2),
        }
    }

    pub fn output_extent(self, input: usize, k: usize) -> usize {
        match self {
            ConvMode::Valid => input + 1 - k,
            ConvMode::Same => input,
        }
    }
}

/// Geometry of one stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, kh: usize, kw: usize, mode: ConvMode) -> Result<Self> {
        if mode == ConvMode::Valid && (kh > h || kw > w) {
            return Err(Error::mismatch("conv2d", &[kh, kw], &[h, w]));
        }
        Ok(ConvGeom {
            channels,
            h,
            w,
            kh,
            kw,
            oh: mode.output_extent(h, kh),
            ow: mode.output_extent(w, kw),
            pad_top: mode.padding(kh).0,
            pad_left: mode.padding(kw).0,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Unrolls one image (`channels x h x w`) into a `(c*kh*kw) x (oh*ow)`
    /// patch matrix. Rows are ordered by (channel, kernel row, kernel col).
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let np = self.out_pixels();
        debug_assert_eq!(cols.len(), self.patch_len() * np);
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let dst = &mut cols[row * np..(row + 1) * np];
                    for i in 0..self.oh {
                        let src_r = (i + a) as isize - self.pad_top as isize;
                        let out = &mut dst[i * self.ow..(i + 1) * self.ow];
                        if src_r < 0 || src_r >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[src_r as usize * self.w..(src_r as usize + 1) * self.w];
                        for (j, o) in out.iter_mut().enumerate() {
                            let src_c = (j + b) as isize - self.pad_left as isize;
                            *o = if src_c < 0 || src_c >= self.w as isize {
                                0.0
                            } else {
                                src[src_c as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto an image gradient.
    pub fn col2im_add(&self, cols: &[f64], image: &mut [f64]) {
        let np = self.out_pixels();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let src = &cols[row * np..(row + 1) * np];
                    for i in 0..self.oh {
                        let r = (i + a) as isize - self.pad_top as isize;
                        if r < 0 || r >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[r as usize * self.w..(r as usize + 1) * self.w];
                        for j in 0..self.ow {
                            let cc = (j + b) as isize - self.pad_left as isize;
                            if cc >= 0 && cc < self.w as isize {
                                dst[cc as usize] += src[i * self.ow + j];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Single-plane stride-1 cross-correlation (no kernel flip).
pub fn conv2d(input: &Tensor, kernel: &Tensor, mode: ConvMode) -> Result<Tensor> {
    if input.ndim() != 2 || kernel.ndim() != 2 {
        return Err(Error::mismatch("conv2d", &[0, 0], input.shape()));
    }
    let (h, w) = (input.shape[0], input.shape[1]);
    let (m, n) = (kernel.shape[0], kernel.shape[1]);
    let c_input = Tensor::new(vec![1, h, w], input.data.clone())?;
    let c_kernel = Tensor::new(vec![1, 1, m, n], kernel.data.clone())?;
    let out = conv2d_multi(&c_input, &c_kernel, mode)?;
    let (oh, ow) = (out.shape[1], out.shape[2]);
    out.reshape(&[oh, ow])
}

/// Multi-channel convolution: `input` is `c x h x w`, `kernels` is
/// `t x c x m x n`; output map `l` sums the per-channel correlations with
/// kernel slice `l`.
pub fn conv2d_multi(input: &Tensor, kernels: &Tensor, mode: ConvMode) -> Result<Tensor> {
    if input.ndim() != 3 || kernels.ndim() != 4 {
        return Err(Error::mismatch("conv2d_multi", &[0, 0, 0], input.shape()));
    }
    let batched = Tensor {
        shape: [&[1][..], input.shape()].concat(),
        data: input.data.clone(),
    };
    let out = conv_forward_batch(&batched, kernels, mode)?;
    let shape = out.shape[1..].to_vec();
    out.reshape(&shape)
}

/// Batched forward convolution: `[B, c, h, w] * [t, c, m, n] -> [B, t, h', w']`.
pub(crate) fn conv_forward_batch(input: &Tensor, kernels: &Tensor, mode: ConvMode) -> Result<Tensor> {
    let geom = batch_geom(input, kernels, mode)?;
    let (b, t) = (input.shape[0], kernels.shape[0]);
    let np = geom.out_pixels();
    let k = geom.patch_len();
    let mut out = Tensor::zeros(&[b, t, geom.oh, geom.ow]);
    let mut cols = vec![0.0; k * np];
    let per_in = geom.channels * geom.h * geom.w;
    for (s, out_s) in out.data.chunks_mut(t * np).enumerate() {
        geom.im2col(&input.data[s * per_in..(s + 1) * per_in], &mut cols);
        gemm(t, k, np, &kernels.data, (k, 1), &cols, (np, 1), out_s, 0.0);
    }
    Ok(out)
}

/// Gradients of a batched convolution. Returns `(grad_input, grad_kernels)`;
/// `grad_input` is skipped when `need_input` is false (first layer).
pub(crate) fn conv_backward_batch(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    mode: ConvMode,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let geom = batch_geom(input, kernels, mode)?;
    let (b, t) = (input.shape[0], kernels.shape[0]);
    let expected = [b, t, geom.oh, geom.ow];
    if upstream.shape() != expected {
        return Err(Error::mismatch("conv backward", &expected, upstream.shape()));
    }
    let np = geom.out_pixels();
    let k = geom.patch_len();
    let per_in = geom.channels * geom.h * geom.w;
    let mut grad_k = Tensor::zeros(kernels.shape());
    let mut grad_in = need_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![0.0; k * np];
    let mut dcols = vec![0.0; k * np];
    for s in 0..b {
        let up = &upstream.data[s * t * np..(s + 1) * t * np];
        geom.im2col(&input.data[s * per_in..(s + 1) * per_in], &mut cols);
        // grad_k[t][k] += sum_p up[t][p] * cols[k][p]
        gemm(t, np, k, up, (np, 1), &cols, (1, np), &mut grad_k.data, 1.0);
        if let Some(gi) = grad_in.as_mut() {
            // dcols[k][p] = sum_t kernels[t][k] * up[t][p]
            gemm(k, t, np, &kernels.data, (1, k), up, (np, 1), &mut dcols, 0.0);
            geom.col2im_add(&dcols, &mut gi.data[s * per_in..(s + 1) * per_in]);
        }
    }
    Ok((grad_in, grad_k))
}

fn batch_geom(input: &Tensor, kernels: &Tensor, mode: ConvMode) -> Result<ConvGeom> {
    if input.ndim() != 4 || kernels.ndim() != 4 {
        return Err(Error::mismatch("conv2d", &[0, 0, 0, 0], input.shape()));
    }
    let c = input.shape[1];
    if kernels.shape[1] != c {
        return Err(Error::mismatch("conv2d channels", &[kernels.shape[1]], &[c]));
    }
    ConvGeom::new(c, input.shape[2], input.shape[3], kernels.shape[2], kernels.shape[3], mode)
}

/// `c = a * b + beta * c` for row-major buffers with explicit (row, col)
/// strides. Deterministic for fixed sizes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(m * n <= c.len());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let a_end = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let b_end = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(a_end < a.len() && b_end < b.len(), "gemm operand out of bounds");
    // SAFETY: the asserts above bound every element the kernel will touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of a `p x q` and a `q x r` matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::mismatch("matmul", a.shape(), b.shape()));
    }
    let (p, q, r) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[p, r]);
    gemm(p, q, r, &a.data, (q, 1), &b.data, (r, 1), &mut out.data, 0.0);
    Ok(out)
}

/// Result of a 2x2/stride-2 max pool: pooled values plus, for every output
/// cell, the flat index of the winning input element.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2 over a `c x h x w` or `B x c x h x w`
/// tensor. Ties go to the first element in row-major window order.
pub fn max_pool2d(input: &Tensor) -> Result<Pooled> {
    let nd = input.ndim();
    if nd != 3 && nd != 4 {
        return Err(Error::InvalidShape {
            op: "max_pool2d",
            shape: input.shape.clone(),
            reason: "expected c x h x w or B x c x h x w".into(),
        });
    }
    let (h, w) = (input.shape[nd - 2], input.shape[nd - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "max_pool2d",
            shape: input.shape.clone(),
            reason: "spatial extents must be even".into(),
        });
    }
    let planes: usize = input.shape[..nd - 2].iter().product();
    let (oh, ow) = (h / 2, w / 2);
    let mut out_shape = input.shape.clone();
    out_shape[nd - 2] = oh;
    out_shape[nd - 1] = ow;
    let mut output = Tensor::zeros(&out_shape);
    let mut argmax = vec![0usize; output.len()];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if input.data[idx] > input.data[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                output.data[o] = input.data[best];
                argmax[o] = best;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// Routes the pooled gradient back to the recorded argmax positions.
pub fn max_pool2d_backward(upstream: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::mismatch("max_pool2d backward", &[argmax.len()], &[upstream.len()]));
    }
    let mut grad = Tensor::zeros(input_shape);
    for (&g, &idx) in upstream.data.iter().zip(argmax) {
        grad.data[idx] += g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Textbook quadruple loop with zero padding, accumulating over
    /// (channel, kernel row, kernel col).
    fn naive_conv(input: &Tensor, kernels: &Tensor, mode: ConvMode) -> Tensor {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (t, m, n) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
        let (pt, _) = mode.padding(m);
        let (pl, _) = mode.padding(n);
        let (oh, ow) = (mode.output_extent(h, m), mode.output_extent(w, n));
        let mut out = Tensor::zeros(&[t, oh, ow]);
        for l in 0..t {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for a in 0..m {
                            for b in 0..n {
                                let r = (i + a) as isize - pt as isize;
                                let cc = (j + b) as isize - pl as isize;
                                if r >= 0 && cc >= 0 && (r as usize) < h && (cc as usize) < w {
                                    acc += input.get(&[ch, r as usize, cc as usize]) * kernels.get(&[l, ch, a, b]);
                                }
                            }
                        }
                    }
                    out.set(&[l, i, j], acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(&[5, 7], 1.0, &mut rng);
        let k = t2(&[&[1.0]]);
        assert_eq!(conv2d(&a, &k, ConvMode::Valid).unwrap(), a);
    }

    #[test]
    fn conv2d_box_kernel_hand_values() {
        let a = t2(&[&[1., 2., 3.], &[4., 5., 6.], &[7., 8., 9.]]);
        let k = t2(&[&[1., 1.], &[1., 1.]]);
        let out = conv2d(&a, &k, ConvMode::Valid).unwrap();
        assert_eq!(out, t2(&[&[12., 16.], &[24., 28.]]));
        for i in 0..2 {
            for j in 0..2 {
                let window: f64 = (0..2).flat_map(|p| (0..2).map(move |q| (p, q))).map(|(p, q)| a.get(&[i + p, j + q])).sum();
                assert_eq!(out.get(&[i, j]), window);
            }
        }
    }

    #[test]
    fn conv2d_zero_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::randn(&[6, 6], 1.0, &mut rng);
        let out = conv2d(&a, &Tensor::zeros(&[3, 2]), ConvMode::Valid).unwrap();
        assert_eq!(out.shape(), &[4, 5]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_kernel_larger_than_input_is_an_error() {
        let a = Tensor::zeros(&[2, 2]);
        let err = conv2d(&a, &Tensor::zeros(&[3, 3]), ConvMode::Valid).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    }

    #[test]
    fn same_mode_keeps_extent_and_pads_small_side_first() {
        assert_eq!(ConvMode::Same.padding(4), (1, 2));
        assert_eq!(ConvMode::Same.padding(5), (2, 2));
        let a = Tensor::filled(&[4, 5], 1.0);
        let out = conv2d(&a, &Tensor::filled(&[2, 2], 1.0), ConvMode::Same).unwrap();
        assert_eq!(out.shape(), &[4, 5]);
        // 2x2 kernel pads 0 before and 1 after: bottom-right cell sees one pixel.
        assert_eq!(out.get(&[3, 4]), 1.0);
        assert_eq!(out.get(&[0, 0]), 4.0);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c, t, h, w, m, n) in [(1, 1, 4, 4, 3, 3), (2, 5, 7, 6, 3, 2), (3, 4, 8, 8, 5, 5), (2, 3, 5, 5, 4, 4)] {
            let x = Tensor::randn(&[c, h, w], 1.0, &mut rng);
            let k = Tensor::randn(&[t, c, m, n], 1.0, &mut rng);
            for mode in [ConvMode::Valid, ConvMode::Same] {
                let fast = conv2d_multi(&x, &k, mode).unwrap();
                let naive = naive_conv(&x, &k, mode);
                assert_eq!(fast.shape(), naive.shape());
                assert!(fast.max_abs_diff(&naive) < 1e-12, "c={c} t={t} mode={mode:?}");
            }
        }
    }

    #[test]
    fn multi_channel_single_plane_equals_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[6, 6], 1.0, &mut rng);
        let k = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let single = conv2d(&x, &k, ConvMode::Same).unwrap();
        let multi = conv2d_multi(
            &x.clone().reshape(&[1, 6, 6]).unwrap(),
            &k.clone().reshape(&[1, 1, 3, 3]).unwrap(),
            ConvMode::Same,
        )
        .unwrap();
        assert_eq!(multi.data(), single.data());
    }

    #[test]
    fn two_channels_sum_per_channel_correlations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::randn(&[4, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 4], 1.0, &mut rng);
        let ka = Tensor::randn(&[2, 2], 1.0, &mut rng);
        let kb = Tensor::randn(&[2, 2], 1.0, &mut rng);
        let x = Tensor::new(vec![2, 4, 4], [a.data(), b.data()].concat()).unwrap();
        let k = Tensor::new(vec![1, 2, 2, 2], [ka.data(), kb.data()].concat()).unwrap();
        let got = conv2d_multi(&x, &k, ConvMode::Valid).unwrap();
        let want = conv2d(&a, &ka, ConvMode::Valid)
            .unwrap()
            .add(&conv2d(&b, &kb, ConvMode::Valid).unwrap())
            .unwrap();
        assert!(got.reshape(&[3, 3]).unwrap().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            conv2d_multi(&x, &k, ConvMode::Valid),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let out = conv2d_multi(&Tensor::zeros(&[3, 5, 5]), &k, ConvMode::Same).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_values_and_identity() {
        let a = t2(&[&[1., 2.], &[3., 4.]]);
        let b = t2(&[&[5.], &[6.]]);
        assert_eq!(matmul(&a, &b).unwrap(), t2(&[&[17.], &[39.]]));
        let eye = t2(&[&[1., 0.], &[0., 1.]]);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let z = Tensor::zeros(&[3, 2]);
        assert!(matmul(&z, &a).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(matmul(&b, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::randn(&[13, 29], 1.0, &mut rng);
        let b = Tensor::randn(&[29, 17], 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for i in 0..13 {
            for j in 0..17 {
                let want: f64 = (0..29).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
                assert!((got.get(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_single_window_and_ties() {
        let x = Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let p = max_pool2d(&x).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);

        let c = Tensor::filled(&[1, 4, 4], 2.5);
        let p = max_pool2d(&c).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 2.5));
        assert_eq!(p.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn max_pool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[2, 4, 4], 1.0, &mut rng);
        let p = max_pool2d(&x).unwrap();
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            best = best.max(x.get(&[c, 2 * i + a, 2 * j + b]));
                        }
                    }
                    assert_eq!(p.output.get(&[c, i, j]), best);
                }
            }
        }
        for (o, &idx) in p.output.data().iter().zip(&p.argmax) {
            assert_eq!(*o, x.data()[idx]);
        }
    }

    #[test]
    fn max_pool_rejects_odd_extent() {
        assert!(matches!(
            max_pool2d(&Tensor::zeros(&[1, 3, 4])),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn tensor_rejects_bad_lengths() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }
}
