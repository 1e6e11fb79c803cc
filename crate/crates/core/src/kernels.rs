//! Deterministic numeric kernels on 4-D `(N, C, H, W)` tensors.
//!
//! Every kernel is a pure function. Backward passes live next to their
//! forward kernel so the autograd tape can call them directly. Accumulation
//! order is fixed: no kernel reorders a reduction between calls.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PadMode {
    Replicate,
    Zero,
}

/// Geometry of a square-kernel convolution. Padding is always `k / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: PadMode,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: PadMode::Replicate,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: PadMode) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(arg_err!("kernel size must be odd, got {}", self.kernel));
        }
        if self.stride == 0 {
            return Err(arg_err!("stride must be at least 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(arg_err!("channel counts must be at least 1"));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Pads height and width by `p` on each side, repeating the edge values.
pub fn replicate_pad<T: Scalar>(t: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let src = t.data();
    let mut out = Vec::with_capacity(n * c * hp * wp);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..hp {
            let sy = clamp_index(y as isize - p as isize, h);
            for x in 0..wp {
                let sx = clamp_index(x as isize - p as isize, w);
                out.push(src[base + sy * w + sx]);
            }
        }
    }
    Tensor::new(vec![n, c, hp, wp], out)
}

/// Adjoint of [`replicate_pad`]: folds border gradients onto the edge pixels.
pub fn replicate_pad_backward<T: Scalar>(grad: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (n, c, hp, wp) = grad.dims4()?;
    if hp <= 2 * p || wp <= 2 * p {
        return Err(shape_err!(
            "padded gradient {:?} too small for p={p}",
            grad.shape()
        ));
    }
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let mut out = Tensor::zeros(vec![n, c, h, w])?;
    let g = grad.data();
    let o = out.data_mut();
    for plane in 0..n * c {
        for y in 0..hp {
            let sy = clamp_index(y as isize - p as isize, h);
            for x in 0..wp {
                let sx = clamp_index(x as isize - p as isize, w);
                o[plane * h * w + sy * w + sx] += g[plane * hp * wp + y * wp + x];
            }
        }
    }
    Ok(out)
}

/// Lowers one sample into a `[C*k*k, Ho*Wo]` patch matrix. Row order is
/// channel, then kernel row, then kernel column.
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let k = spec.kernel;
    let p = spec.pad() as isize;
    let s = spec.stride as isize;
    let npos = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let y_in = iy >= 0 && iy < h as isize;
                    let sy = clamp_index(iy, h);
                    for ox in 0..wo {
                        let ix = ox as isize * s + kx as isize - p;
                        let v = match spec.padding {
                            PadMode::Replicate => plane[sy * w + clamp_index(ix, w)],
                            PadMode::Zero => {
                                if y_in && ix >= 0 && ix < w as isize {
                                    plane[sy * w + ix as usize]
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        dst[oy * wo + ox] = v;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `dx`.
fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let k = spec.kernel;
    let p = spec.pad() as isize;
    let s = spec.stride as isize;
    let npos = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * npos..(row + 1) * npos];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let y_in = iy >= 0 && iy < h as isize;
                    let sy = clamp_index(iy, h);
                    for ox in 0..wo {
                        let ix = ox as isize * s + kx as isize - p;
                        match spec.padding {
                            PadMode::Replicate => {
                                plane[sy * w + clamp_index(ix, w)] += src[oy * wo + ox]
                            }
                            PadMode::Zero => {
                                if y_in && ix >= 0 && ix < w as isize {
                                    plane[sy * w + ix as usize] += src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_args<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, w) = x.dims4()?;
    if c != spec.in_channels {
        return Err(shape_err!(
            "conv2d expects {} input channels, got {c}",
            spec.in_channels
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(shape_err!(
            "conv2d weight shape {:?}, expected {:?}",
            weight.shape(),
            spec.weight_shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(shape_err!("conv2d bias shape {:?}", b.shape()));
        }
    }
    Ok((n, c, h, w))
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1
}

/// Cross-correlation with `k / 2` padding, so stride 1 preserves `H x W`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_conv_args(x, weight, bias, spec)?;
    let (ho, wo) = spec.output_hw(h, w);
    let co = spec.out_channels;
    let rows = c * spec.kernel * spec.kernel;
    let npos = ho * wo;
    let mut out = Tensor::zeros(vec![n, co, ho, wo])?;
    let mut col = if is_pointwise(spec) {
        Vec::new()
    } else {
        vec![T::zero(); rows * npos]
    };
    let xs = x.data();
    let wd = weight.data();
    for b in 0..n {
        let xin = &xs[b * c * h * w..(b + 1) * c * h * w];
        let patches: &[T] = if is_pointwise(spec) {
            xin
        } else {
            im2col(xin, c, h, w, spec, ho, wo, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[b * co * npos..(b + 1) * co * npos];
        T::gemm(
            co,
            rows,
            npos,
            T::one(),
            wd,
            rows as isize,
            1,
            patches,
            npos as isize,
            1,
            T::zero(),
            dst,
            npos as isize,
            1,
        );
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[o * npos..(o + 1) * npos] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and (if requested) bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    with_bias: bool,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (n, c, h, w) = check_conv_args(x, weight, None, spec)?;
    let (ho, wo) = spec.output_hw(h, w);
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, ho, wo] {
        return Err(shape_err!("conv2d grad shape {:?}", grad_out.shape()));
    }
    let rows = c * spec.kernel * spec.kernel;
    let npos = ho * wo;
    let mut dx = x.zeros_like();
    let mut dw = weight.zeros_like();
    let mut col = if is_pointwise(spec) {
        Vec::new()
    } else {
        vec![T::zero(); rows * npos]
    };
    let mut dcol = vec![T::zero(); rows * npos];
    let xs = x.data();
    let gs = grad_out.data();
    for b in 0..n {
        let xin = &xs[b * c * h * w..(b + 1) * c * h * w];
        let g = &gs[b * co * npos..(b + 1) * co * npos];
        let patches: &[T] = if is_pointwise(spec) {
            xin
        } else {
            im2col(xin, c, h, w, spec, ho, wo, &mut col);
            &col
        };
        // dW += dOut * patches^T
        T::gemm(
            co,
            npos,
            rows,
            T::one(),
            g,
            npos as isize,
            1,
            patches,
            1,
            npos as isize,
            T::one(),
            dw.data_mut(),
            rows as isize,
            1,
        );
        // dpatches = W^T * dOut
        T::gemm(
            rows,
            co,
            npos,
            T::one(),
            weight.data(),
            1,
            rows as isize,
            g,
            npos as isize,
            1,
            T::zero(),
            &mut dcol,
            npos as isize,
            1,
        );
        let dxs = &mut dx.data_mut()[b * c * h * w..(b + 1) * c * h * w];
        if is_pointwise(spec) {
            for (d, &v) in dxs.iter_mut().zip(&dcol) {
                *d += v;
            }
        } else {
            col2im(&dcol, c, h, w, spec, ho, wo, dxs);
        }
    }
    let db = with_bias.then(|| channel_sum(grad_out));
    Ok((dx, dw, db))
}

/// Per-channel sum over batch and spatial positions; works for rank 2 and 4.
pub fn channel_sum<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let shape = t.shape();
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut out = vec![T::zero(); c];
    let d = t.data();
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let base = (b * c + ch) * inner;
            for &v in &d[base..base + inner] {
                *acc += v;
            }
        }
    }
    Tensor::new(vec![c], out).expect("c >= 1")
}

/// `t^k` by repeated multiplication.
pub fn elem_pow<T: Scalar>(t: &Tensor<T>, k: u32) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(arg_err!("elem_pow exponent must be at least 1"));
    }
    Ok(t.map(|v| {
        let mut acc = v;
        for _ in 1..k {
            acc = acc * v;
        }
        acc
    }))
}

/// Depth-to-space: `(N, C*r*r, H, W) -> (N, C, H*r, W*r)`.
pub fn pixel_shuffle<T: Scalar>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(shape_err!(
            "pixel_shuffle: {c} channels not divisible by {r}^2"
        ));
    }
    let co = c / (r * r);
    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for oc in 0..co {
            for y in 0..h * r {
                for x in 0..w * r {
                    let ic = oc * r * r + (y % r) * r + (x % r);
                    let si = ((b * c + ic) * h + y / r) * w + x / r;
                    let di = ((b * co + oc) * h * r + y) * w * r + x;
                    out[di] = src[si];
                }
            }
        }
    }
    Tensor::new(vec![n, co, h * r, w * r], out)
}

/// Space-to-depth, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = t.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(shape_err!("pixel_unshuffle: {h}x{w} not divisible by {r}"));
    }
    let (ho, wo) = (h / r, w / r);
    let co = c * r * r;
    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let oc = ic * r * r + (y % r) * r + (x % r);
                    let di = ((b * co + oc) * ho + y / r) * wo + x / r;
                    let si = ((b * c + ic) * h + y) * w + x;
                    out[di] = src[si];
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the coordinate was inside the image (clamping kills the gradient).
    gx: bool,
    gy: bool,
}

#[inline]
fn tap<T: Scalar>(px: T, py: T, h: usize, w: usize) -> Tap<T> {
    let (wmax, hmax) = (T::from_usize(w - 1).unwrap(), T::from_usize(h - 1).unwrap());
    let sx = px.max(T::zero()).min(wmax);
    let sy = py.max(T::zero()).min(hmax);
    let x0 = sx.floor().to_usize().unwrap().min(w - 1);
    let y0 = sy.floor().to_usize().unwrap().min(h - 1);
    Tap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: sx - T::from_usize(x0).unwrap(),
        fy: sy - T::from_usize(y0).unwrap(),
        gx: px >= T::zero() && px <= wmax,
        gy: py >= T::zero() && py <= hmax,
    }
}

fn check_offsets<T: Scalar>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if offsets.shape() != [n, 2 * c, h, w] {
        return Err(shape_err!(
            "offsets must be {:?}, got {:?}",
            [n, 2 * c, h, w],
            offsets.shape()
        ));
    }
    if offsets.data().iter().any(|v| v.is_nan()) {
        return Err(crate::Error::NonFinite("NaN sampling offset".into()));
    }
    Ok((n, c, h, w))
}

/// Samples every channel at `(x + dx, y + dy)` with bilinear interpolation.
///
/// `offsets` is `(N, 2C, H, W)`: channel `2c` holds the horizontal shift of
/// input channel `c`, channel `2c + 1` the vertical one. Coordinates are
/// clamped to the image, which is the same as sampling a replicate-padded
/// image.
pub fn bilinear_sample<T: Scalar>(x: &Tensor<T>, offsets: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_offsets(x, offsets)?;
    let xs = x.data();
    let os = offsets.data();
    let hw = h * w;
    let mut out = vec![T::zero(); xs.len()];
    let one = T::one();
    for b in 0..n {
        for ch in 0..c {
            let plane = &xs[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let dxs = &os[(b * 2 * c + 2 * ch) * hw..(b * 2 * c + 2 * ch + 1) * hw];
            let dys = &os[(b * 2 * c + 2 * ch + 1) * hw..(b * 2 * c + 2 * ch + 2) * hw];
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    let t = tap(
                        T::from_usize(xx).unwrap() + dxs[i],
                        T::from_usize(y).unwrap() + dys[i],
                        h,
                        w,
                    );
                    let top = (one - t.fx) * plane[t.y0 * w + t.x0] + t.fx * plane[t.y0 * w + t.x1];
                    let bot = (one - t.fx) * plane[t.y1 * w + t.x0] + t.fx * plane[t.y1 * w + t.x1];
                    dst[i] = (one - t.fy) * top + t.fy * bot;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradients of [`bilinear_sample`] with respect to the input and the offsets.
pub fn bilinear_sample_backward<T: Scalar>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = check_offsets(x, offsets)?;
    x.expect_same_shape(grad_out)?;
    let xs = x.data();
    let os = offsets.data();
    let gs = grad_out.data();
    let hw = h * w;
    let mut dx = vec![T::zero(); xs.len()];
    let mut doff = vec![T::zero(); os.len()];
    let one = T::one();
    for b in 0..n {
        for ch in 0..c {
            let pbase = (b * c + ch) * hw;
            let xo = (b * 2 * c + 2 * ch) * hw;
            let yo = xo + hw;
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    let g = gs[pbase + i];
                    let t = tap(
                        T::from_usize(xx).unwrap() + os[xo + i],
                        T::from_usize(y).unwrap() + os[yo + i],
                        h,
                        w,
                    );
                    let (i00, i01) = (t.y0 * w + t.x0, t.y0 * w + t.x1);
                    let (i10, i11) = (t.y1 * w + t.x0, t.y1 * w + t.x1);
                    dx[pbase + i00] += g * (one - t.fy) * (one - t.fx);
                    dx[pbase + i01] += g * (one - t.fy) * t.fx;
                    dx[pbase + i10] += g * t.fy * (one - t.fx);
                    dx[pbase + i11] += g * t.fy * t.fx;
                    let p = |j: usize| xs[pbase + j];
                    if t.gx {
                        let d = (one - t.fy) * (p(i01) - p(i00)) + t.fy * (p(i11) - p(i10));
                        doff[xo + i] += g * d;
                    }
                    if t.gy {
                        let top = (one - t.fx) * p(i00) + t.fx * p(i01);
                        let bot = (one - t.fx) * p(i10) + t.fx * p(i11);
                        doff[yo + i] += g * (bot - top);
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(offsets.shape().to_vec(), doff)?,
    ))
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics from a training-mode batch norm pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance used for normalization.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Number of values reduced per channel.
    pub count: usize,
}

fn bn_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = x.shape();
    if shape.len() != 4 && shape.len() != 2 {
        return Err(shape_err!("batch_norm expects rank 2 or 4, got {shape:?}"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Training-mode batch norm over channel axis 1.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let (n, c, inner) = bn_dims(x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!("batch_norm affine params must be [{c}]"));
    }
    let count = n * inner;
    let cnt = T::from_usize(count).unwrap();
    let eps = T::lit(BN_EPS);
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            for &v in &d[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                mean[ch] += v;
            }
        }
    }
    for m in &mut mean {
        *m = *m / cnt;
    }
    for b in 0..n {
        for ch in 0..c {
            for &v in &d[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                let e = v - mean[ch];
                var[ch] += e * e;
            }
        }
    }
    for v in &mut var {
        *v = *v / cnt;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = x.zeros_like();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                o[i] = (d[i] - mean[ch]) * inv_std[ch] * g + bt;
            }
        }
    }
    Ok((
        out,
        BatchStats {
            mean,
            var,
            inv_std,
            count,
        },
    ))
}

/// Eval-mode batch norm with fixed statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, inner) = bn_dims(x)?;
    for p in [gamma, beta, running_mean, running_var] {
        if p.shape() != [c] {
            return Err(shape_err!("batch_norm params must be [{c}]"));
        }
    }
    let eps = T::lit(BN_EPS);
    let d = x.data();
    let mut out = x.zeros_like();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let inv = T::one() / (running_var.data()[ch] + eps).sqrt();
            let (g, bt, m) = (gamma.data()[ch], beta.data()[ch], running_mean.data()[ch]);
            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                o[i] = (d[i] - m) * inv * g + bt;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`batch_norm_train`]: `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchStats<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, inner) = bn_dims(x)?;
    x.expect_same_shape(grad_out)?;
    let d = x.data();
    let g = grad_out.data();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                let xhat = (d[i] - stats.mean[ch]) * stats.inv_std[ch];
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * xhat;
            }
        }
    }
    let cnt = T::from_usize(stats.count).unwrap();
    let mut dx = x.zeros_like();
    let o = dx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] * stats.inv_std[ch] / cnt;
            for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                let xhat = (d[i] - stats.mean[ch]) * stats.inv_std[ch];
                o[i] = k * (cnt * g[i] - sum_g[ch] - xhat * sum_gx[ch]);
            }
        }
    }
    Ok((
        dx,
        Tensor::new(vec![c], sum_gx)?,
        Tensor::new(vec![c], sum_g)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Six-loop reference convolution over an explicitly padded input.
    fn brute_conv(x: &Tensor<f64>, wt: &Tensor<f64>, bias: &[f64], spec: &ConvSpec) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let k = spec.kernel;
        let p = spec.pad();
        let (ho, wo) = spec.output_hw(h, w);
        let mut out = Tensor::zeros(vec![n, spec.out_channels, ho, wo]).unwrap();
        let fetch = |b: usize, ci: usize, iy: isize, ix: isize| -> f64 {
            let inside = iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize;
            match spec.padding {
                PadMode::Zero if !inside => 0.0,
                _ => {
                    let yy = iy.max(0).min(h as isize - 1) as usize;
                    let xx = ix.max(0).min(w as isize - 1) as usize;
                    x.at4(b, ci, yy, xx)
                }
            }
        };
        for b in 0..n {
            for o in 0..spec.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias[o];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * spec.stride + ky) as isize - p as isize;
                                    let ix = (ox * spec.stride + kx) as isize - p as isize;
                                    acc += wt.at4(o, ci, ky, kx) * fetch(b, ci, iy, ix);
                                }
                            }
                        }
                        let i = out.idx4(b, o, oy, ox);
                        out.data_mut()[i] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn replicate_pad_identity_and_corners() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(replicate_pad(&t, 0).unwrap(), t);
        let p = replicate_pad(&t, 1).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let want = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(p.data(), want.as_slice());
        let c = Tensor::<f32>::full(vec![2, 3, 3, 2], 0.7).unwrap();
        let pc = replicate_pad(&c, 3).unwrap();
        assert_eq!(pc.shape(), &[2, 3, 9, 8]);
        assert!(pc.data().iter().all(|&v| v == 0.7));
        assert!(replicate_pad(&Tensor::<f32>::zeros(vec![2, 2]).unwrap(), 1).is_err());
    }

    #[test]
    fn replicate_pad_backward_is_adjoint() {
        let x = random(&[1, 2, 3, 4], 1);
        let g = random(&[1, 2, 7, 8], 2);
        let lhs: f64 = replicate_pad(&x, 2).unwrap().mul(&g).unwrap().sum();
        let rhs: f64 = x
            .mul(&replicate_pad_backward(&g, 2).unwrap())
            .unwrap()
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_and_constant() {
        let x = random(&[2, 1, 4, 5], 3);
        let id = Tensor::ones(vec![1, 1, 1, 1]).unwrap();
        let zero_bias = Tensor::zeros(vec![1]).unwrap();
        let spec = ConvSpec::new(1, 1, 1);
        assert_eq!(conv2d(&x, &id, Some(&zero_bias), &spec).unwrap(), x);

        let c = Tensor::<f64>::full(vec![1, 1, 5, 5], 0.25).unwrap();
        let ones = Tensor::ones(vec![1, 1, 3, 3]).unwrap();
        let out = conv2d(&c, &ones, None, &ConvSpec::new(1, 1, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 9.0 * 0.25));
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let x = random(&[1, 2, 4, 4], 4);
        let w = random(&[1, 2, 2, 2], 5);
        assert!(conv2d(&x, &w, None, &ConvSpec::new(2, 1, 2)).is_err());
        let w3 = random(&[1, 3, 3, 3], 5);
        assert!(conv2d(&x, &w3, None, &ConvSpec::new(3, 1, 3)).is_err());
    }

    #[test]
    fn conv_matches_brute_force() {
        for (seed, padding, stride, k) in [
            (10, PadMode::Replicate, 1, 3),
            (11, PadMode::Zero, 1, 3),
            (12, PadMode::Replicate, 2, 3),
            (13, PadMode::Replicate, 1, 5),
            (14, PadMode::Replicate, 1, 1),
        ] {
            let x = random(&[1, 2, 4, 4], seed);
            let spec = ConvSpec::new(2, 3, k)
                .with_padding(padding)
                .with_stride(stride);
            let w = random(&spec.weight_shape(), seed + 100);
            let b = random(&[3], seed + 200);
            let got = conv2d(&x, &w, Some(&b), &spec).unwrap();
            let want = brute_conv(&x, &w, b.data(), &spec);
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!(
                    (g - e).abs() <= 1e-6 * e.abs().max(1e-12) + 1e-15,
                    "{g} vs {e}"
                );
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is bilinear, so its partials are checked by inner products.
        for (padding, stride) in [(PadMode::Replicate, 1), (PadMode::Zero, 2)] {
            let spec = ConvSpec::new(2, 3, 3)
                .with_padding(padding)
                .with_stride(stride);
            let x = random(&[2, 2, 5, 4], 20);
            let w = random(&spec.weight_shape(), 21);
            let (ho, wo) = spec.output_hw(5, 4);
            let g = random(&[2, 3, ho, wo], 22);
            let (dx, dw, db) = conv2d_backward(&x, &w, &g, &spec, true).unwrap();
            let dxp = random(&[2, 2, 5, 4], 23);
            let lhs = conv2d(&dxp, &w, None, &spec)
                .unwrap()
                .mul(&g)
                .unwrap()
                .sum();
            assert!((lhs - dx.mul(&dxp).unwrap().sum()).abs() < 1e-10);
            let dwp = random(&spec.weight_shape(), 24);
            let lhs = conv2d(&x, &dwp, None, &spec)
                .unwrap()
                .mul(&g)
                .unwrap()
                .sum();
            assert!((lhs - dw.mul(&dwp).unwrap().sum()).abs() < 1e-10);
            assert_eq!(db.unwrap(), channel_sum(&g));
        }
    }

    #[test]
    fn elem_pow_values() {
        let t = Tensor::new(vec![2], vec![-2.0f64, 3.0]).unwrap();
        assert_eq!(elem_pow(&t, 1).unwrap(), t);
        assert_eq!(elem_pow(&t, 2).unwrap().data(), &[4.0, 9.0]);
        assert!(elem_pow(&t, 0).is_err());
    }

    #[test]
    fn pixel_shuffle_shapes_and_round_trip() {
        let t = random(&[2, 8, 3, 2], 30);
        assert_eq!(pixel_shuffle(&t, 1).unwrap(), t);
        let s = pixel_shuffle(&t, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 6, 4]);
        assert_eq!(pixel_unshuffle(&s, 2).unwrap(), t);
        assert!(pixel_shuffle(&random(&[1, 3, 2, 2], 1), 2).is_err());
        let small = Tensor::from_fn(vec![1, 4, 2, 2], |i| i as f64).unwrap();
        let out = pixel_shuffle(&small, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        // Top-left 2x2 block of the output gathers channel 0..4 at (0,0).
        assert_eq!(
            [
                out.at4(0, 0, 0, 0),
                out.at4(0, 0, 0, 1),
                out.at4(0, 0, 1, 0),
                out.at4(0, 0, 1, 1)
            ],
            [0.0, 4.0, 8.0, 12.0]
        );
    }

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![1, 1, h, w], |i| (i % w) as f64).unwrap()
    }

    #[test]
    fn bilinear_zero_offsets_is_identity() {
        let x = random(&[2, 3, 4, 5], 40);
        let off = Tensor::zeros(vec![2, 6, 4, 5]).unwrap();
        assert_eq!(bilinear_sample(&x, &off).unwrap(), x);
    }

    #[test]
    fn bilinear_integer_and_half_shifts() {
        let x = ramp(3, 6);
        let mut off = Tensor::zeros(vec![1, 2, 3, 6]).unwrap();
        off.data_mut()[..18].fill(1.0);
        let out = bilinear_sample(&x, &off).unwrap();
        for y in 0..3 {
            for xx in 0..5 {
                assert_eq!(out.at4(0, 0, y, xx), x.at4(0, 0, y, xx + 1));
            }
        }
        off.data_mut()[..18].fill(0.5);
        let out = bilinear_sample(&x, &off).unwrap();
        for y in 0..3 {
            for xx in 0..5 {
                assert_eq!(out.at4(0, 0, y, xx), xx as f64 + 0.5);
            }
            // Clamped at the right edge.
            assert_eq!(out.at4(0, 0, y, 5), 5.0);
        }
        off.data_mut()[0] = f64::NAN;
        assert!(bilinear_sample(&x, &off).is_err());
    }

    #[test]
    fn batch_norm_cases() {
        let x = Tensor::new(vec![4, 1, 1, 1], vec![-1.0f64, 1.0, -1.0, 1.0]).unwrap();
        let ones = Tensor::ones(vec![1]).unwrap();
        let zeros = Tensor::zeros(vec![1]).unwrap();
        let (out, stats) = batch_norm_train(&x, &ones, &zeros).unwrap();
        assert_eq!(stats.mean, vec![0.0]);
        assert!(out.max_abs_diff(&x).unwrap() <= 1e-5);

        let beta = Tensor::full(vec![1], 0.3).unwrap();
        let (out, _) = batch_norm_train(&random(&[3, 1, 2, 2], 50), &zeros, &beta).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3));

        let rm = Tensor::full(vec![1], 0.5).unwrap();
        let rv = Tensor::full(vec![1], 4.0).unwrap();
        let gamma = Tensor::full(vec![1], 2.0).unwrap();
        let out = batch_norm_eval(&x, &gamma, &beta, &rm, &rv).unwrap();
        for (o, &v) in out.data().iter().zip(x.data()) {
            let want = (v - 0.5) / (4.0 + 1e-5f64).sqrt() * 2.0 + 0.3;
            assert!((o - want).abs() < 1e-15);
        }
    }
}
