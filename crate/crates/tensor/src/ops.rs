//! Layer primitives. Each forward function has a matching backward function
//! that takes the forward inputs plus the upstream gradient.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Four-lane dot product; lanes keep the summation order fixed.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c = a·b + beta·c` for row-major `c` (m×n); `a` (m×k) and `b` (k×n) are
/// given by row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    let span = |(v, r, s): (&[f64], isize, isize), rows: usize, cols: usize| {
        assert!(rows == 0 || cols == 0 || (rows as isize - 1) * r + (cols as isize - 1) * s < v.len() as isize);
    };
    span(a, m, k);
    span(b, k, n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

fn to_acc_vec<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.to_acc()).collect()
}

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new<S: Scalar>(
        input: &Tensor<S>,
        weight: &Tensor<S>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (is, ws) = (input.shape(), weight.shape());
        if is.len() != 4 || ws.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("expected NCHW input and OCKK weights, got {is:?} and {ws:?}"),
            ));
        }
        if is[1] != ws[1] {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, weights expect {}", is[1], ws[1]),
            ));
        }
        let out_h = conv2d_output_size(is[2], ws[2], stride, padding);
        let out_w = conv2d_output_size(is[3], ws[3], stride, padding);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(shape_err(
                "conv2d",
                format!("kernel {ws:?} with stride {stride} pad {padding} does not fit input {is:?}"),
            ));
        };
        Ok(Self {
            batch: is[0],
            channels: is[1],
            height: is[2],
            width: is[3],
            out_channels: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Rows of `col` index (channel, ky, kx); columns index output pixels.
    fn im2col<S: Scalar>(&self, x: &[S], col: &mut [f64]) {
        let p = self.out_pixels();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &x[c * self.in_pixels()..(c + 1) * self.in_pixels()];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize].to_acc()
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], gx: &mut [f64]) {
        let p = self.out_pixels();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut gx[c * self.in_pixels()..(c + 1) * self.in_pixels()];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, &g) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// 2-D cross-correlation over an NCHW batch. Weights are `[out, in, kh, kw]`,
/// bias is `[out]`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    if bias.len() != g.out_channels {
        return Err(shape_err(
            "conv2d",
            format!("bias has {} entries for {} filters", bias.len(), g.out_channels),
        ));
    }
    let (k, p) = (g.patch_len(), g.out_pixels());
    let w = to_acc_vec(weight.values());
    let mut col = vec![0.0f64; k * p];
    let oc = g.out_channels;
    let mut acc = vec![0.0f64; oc * p];
    let mut out = Vec::with_capacity(g.batch * oc * p);
    let sample_len = g.channels * g.in_pixels();
    for n in 0..g.batch {
        g.im2col(&input.values()[n * sample_len..(n + 1) * sample_len], &mut col);
        for (o, row) in acc.chunks_exact_mut(p).enumerate() {
            row.fill(bias.values()[o].to_acc());
        }
        gemm(oc, k, p, (&w, k as isize, 1), (&col, p as isize, 1), 1.0, &mut acc);
        out.extend(acc.iter().map(|&a| S::from_acc(a)));
    }
    Tensor::new(vec![g.batch, g.out_channels, g.out_h, g.out_w], out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    padding: usize,
    grad_output: &Tensor<S>,
    want_input_grad: bool,
) -> Result<Conv2dGrads<S>> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    let (k, p) = (g.patch_len(), g.out_pixels());
    if grad_output.shape() != [g.batch, g.out_channels, g.out_h, g.out_w] {
        return Err(shape_err(
            "conv2d_backward",
            format!("gradient shape {:?}", grad_output.shape()),
        ));
    }
    let w = to_acc_vec(weight.values());
    let mut gw = vec![0.0f64; g.out_channels * k];
    let mut gb = vec![0.0f64; g.out_channels];
    let sample_len = g.channels * g.in_pixels();
    let mut gx_all = if want_input_grad {
        Vec::with_capacity(g.batch * sample_len)
    } else {
        Vec::new()
    };
    let mut col = vec![0.0f64; k * p];
    let mut gcol = vec![0.0f64; if want_input_grad { k * p } else { 0 }];
    let mut gx = vec![0.0f64; if want_input_grad { sample_len } else { 0 }];
    let out_len = g.out_channels * p;
    for n in 0..g.batch {
        g.im2col(&input.values()[n * sample_len..(n + 1) * sample_len], &mut col);
        let gy = to_acc_vec(&grad_output.values()[n * out_len..(n + 1) * out_len]);
        let oc = g.out_channels;
        for (o, gyo) in gy.chunks_exact(p).enumerate() {
            gb[o] += gyo.iter().sum::<f64>();
        }
        gemm(oc, p, k, (&gy, p as isize, 1), (&col, 1, p as isize), 1.0, &mut gw);
        if want_input_grad {
            gemm(k, oc, p, (&w, 1, k as isize), (&gy, p as isize, 1), 0.0, &mut gcol);
            gx.fill(0.0);
            g.col2im(&gcol, &mut gx);
            gx_all.extend(gx.iter().map(|&v| S::from_acc(v)));
        }
    }
    Ok(Conv2dGrads {
        input: if want_input_grad {
            Some(Tensor::new(input.shape().to_vec(), gx_all)?)
        } else {
            None
        },
        weight: Tensor::new(weight.shape().to_vec(), gw.into_iter().map(S::from_acc).collect())?,
        bias: Tensor::new(vec![g.out_channels], gb.into_iter().map(S::from_acc).collect())?,
    })
}

/// 2×2 max pooling with stride 2 over NCHW. Odd extents are padded on the
/// right/bottom with −∞. Returns the pooled tensor and, per output element,
/// the flat input index of the selected maximum (first index wins ties).
pub fn maxpool2<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(shape_err("maxpool2", format!("expected NCHW, got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.values();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                    if iy < h && ix < w {
                        let idx = base + iy * w + ix;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_output: &Tensor<S>,
) -> Result<Tensor<S>> {
    if argmax.len() != grad_output.len() {
        return Err(shape_err(
            "maxpool2_backward",
            format!("{} routes for {} gradients", argmax.len(), grad_output.len()),
        ));
    }
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let dst = gx.values_mut();
    for (&idx, &g) in argmax.iter().zip(grad_output.values()) {
        dst[idx] = dst[idx] + g;
    }
    Ok(gx)
}

fn dense_dims<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let batch = *input.shape().first().unwrap_or(&0);
    let ws = weight.shape();
    if ws.len() != 2 || batch == 0 {
        return Err(shape_err(
            "dense",
            format!("input {:?}, weight {ws:?}", input.shape()),
        ));
    }
    let features = input.len() / batch;
    if features != ws[0] || bias.len() != ws[1] {
        return Err(shape_err(
            "dense",
            format!(
                "flattened input length {features} vs weight rows {}, bias {} vs columns {}",
                ws[0],
                bias.len(),
                ws[1]
            ),
        ));
    }
    Ok((batch, ws[0], ws[1]))
}

/// Affine map `y = x·W + b` on the flattened per-sample input.
/// Weights are `[in, out]`.
pub fn dense<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, fin, fout) = dense_dims(input, weight, bias)?;
    let w = to_acc_vec(weight.values());
    let mut out = Vec::with_capacity(batch * fout);
    let mut acc = vec![0.0f64; fout];
    for n in 0..batch {
        for (a, b) in acc.iter_mut().zip(bias.values()) {
            *a = b.to_acc();
        }
        for (i, xi) in input.values()[n * fin..(n + 1) * fin].iter().enumerate() {
            let xi = xi.to_acc();
            if xi != 0.0 {
                axpy(xi, &w[i * fout..(i + 1) * fout], &mut acc);
            }
        }
        out.extend(acc.iter().map(|&a| S::from_acc(a)));
    }
    Tensor::new(vec![batch, fout], out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_output: &Tensor<S>,
) -> Result<DenseGrads<S>> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(shape_err("dense_backward", format!("weight {ws:?}")));
    }
    let (fin, fout) = (ws[0], ws[1]);
    let batch = *input.shape().first().unwrap_or(&0);
    if batch == 0 || input.len() != batch * fin || grad_output.len() != batch * fout {
        return Err(shape_err(
            "dense_backward",
            format!("input {:?}, grad {:?}", input.shape(), grad_output.shape()),
        ));
    }
    let w = to_acc_vec(weight.values());
    let mut gw = vec![0.0f64; fin * fout];
    let mut gb = vec![0.0f64; fout];
    let mut gx = Vec::with_capacity(batch * fin);
    for n in 0..batch {
        let gy = to_acc_vec(&grad_output.values()[n * fout..(n + 1) * fout]);
        for (b, g) in gb.iter_mut().zip(&gy) {
            *b += g;
        }
        for (i, xi) in input.values()[n * fin..(n + 1) * fin].iter().enumerate() {
            let row = &w[i * fout..(i + 1) * fout];
            gx.push(S::from_acc(dot(row, &gy)));
            axpy(xi.to_acc(), &gy, &mut gw[i * fout..(i + 1) * fout]);
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(ws.to_vec(), gw.into_iter().map(S::from_acc).collect())?,
        bias: Tensor::new(vec![fout], gb.into_iter().map(S::from_acc).collect())?,
    })
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_output: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != grad_output.shape() {
        return Err(shape_err(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_output.shape()),
        ));
    }
    let g = input
        .values()
        .iter()
        .zip(grad_output.values())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), g)
}

/// `[N, ...] -> [N, prod(...)]`.
pub fn flatten<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let batch = *input.shape().first().unwrap_or(&0);
    if batch == 0 {
        return Err(shape_err("flatten", "empty batch"));
    }
    input.clone().reshape(vec![batch, input.len() / batch])
}

fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    let compatible = sa.len() == sb.len()
        && axis < sa.len()
        && sa.iter().zip(sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
    if !compatible {
        return Err(shape_err(
            "concat",
            format!("{sa:?} and {sb:?} along axis {axis}"),
        ));
    }
    let (outer, na, inner) = split_dims(sa, axis);
    let nb = sb[axis];
    let mut values = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        values.extend_from_slice(&a.values()[o * na * inner..(o + 1) * na * inner]);
        values.extend_from_slice(&b.values()[o * nb * inner..(o + 1) * nb * inner]);
    }
    let mut shape = sa.to_vec();
    shape[axis] = na + nb;
    Tensor::new(shape, values)
}

/// Contiguous range `[start, start + len)` along `axis`.
pub fn slice<S: Scalar>(input: &Tensor<S>, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
    let s = input.shape();
    if axis >= s.len() || start + len > s[axis] {
        return Err(shape_err(
            "slice",
            format!("[{start}, {}) along axis {axis} of {s:?}", start + len),
        ));
    }
    let (outer, n, inner) = split_dims(s, axis);
    let mut values = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        values.extend_from_slice(&input.values()[base..base + len * inner]);
    }
    let mut shape = s.to_vec();
    shape[axis] = len;
    Tensor::new(shape, values)
}

/// Splits the concat gradient back into the two input gradients.
pub fn concat_backward<S: Scalar>(
    a_shape: &[usize],
    b_shape: &[usize],
    axis: usize,
    grad_output: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let ga = slice(grad_output, axis, 0, a_shape[axis])?;
    let gb = slice(grad_output, axis, a_shape[axis], b_shape[axis])?;
    Ok((ga, gb))
}
