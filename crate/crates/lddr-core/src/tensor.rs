//! Dense rank-3 tensors and the four forward-pass kernels (convolution,
//! ReLU, local response normalization, max pooling).
//!
//! Layout is row-major `(height, width, channels)` with interleaved channels,
//! so an image patch is a contiguous block of rows. All kernels are pure
//! functions; tensors are immutable once built.

use crate::error::{Error, Result};

/// Dense rank-3 array of `f64` in `(height, width, channels)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::input("tensor dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::input(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Tensor { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Filter bank of one convolutional layer.
///
/// Weights are stored in `(out_c, in_c/groups, kh, kw)` order, the same
/// order used by the on-disk weight archive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 || groups == 0 {
            return Err(Error::config("conv weight dimensions must be positive"));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::config(format!(
                "channels ({in_channels} in, {out_channels} out) not divisible by groups {groups}"
            )));
        }
        let expect = out_channels * (in_channels / groups) * kernel_h * kernel_w;
        if weights.len() != expect {
            return Err(Error::config(format!(
                "weight length {} does not match declared dims (expected {expect})",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::config(format!(
                "bias length {} does not match out_channels {out_channels}",
                bias.len()
            )));
        }
        Ok(ConvWeights {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            groups,
            weights,
            bias,
        })
    }

    #[inline]
    pub fn at(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        let icg = self.in_channels / self.groups;
        self.weights[((oc * icg + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Output spatial dim of a convolution: `floor((in + 2 pad - k) / stride) + 1`.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output spatial dim of pooling with floor or ceil rounding.
pub fn pool_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ceil_mode: bool,
) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    let num = padded - kernel;
    let q = if ceil_mode { num.div_ceil(stride) } else { num / stride };
    Some(q + 1)
}

/// 2-D convolution with zero padding and channel groups.
///
/// Each output value is the layer bias plus the inner product of the kernel
/// with the zero-padded input window, restricted to the channel group that
/// owns the output channel. Implemented as im2col followed by a GEMM per
/// group.
pub fn conv2d(input: &Tensor, w: &ConvWeights, stride: usize, pad: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::config("conv2d stride must be >= 1"));
    }
    if input.channels() != w.in_channels {
        return Err(Error::config(format!(
            "conv2d channel mismatch: input has {}, weights expect {}",
            input.channels(),
            w.in_channels
        )));
    }
    let out_h = conv_out_dim(input.height(), w.kernel_h, stride, pad).ok_or_else(|| {
        Error::geometry(format!(
            "conv2d window {}x{} larger than padded input {}x{}",
            w.kernel_h,
            w.kernel_w,
            input.height() + 2 * pad,
            input.width() + 2 * pad
        ))
    })?;
    let out_w = conv_out_dim(input.width(), w.kernel_w, stride, pad).ok_or_else(|| {
        Error::geometry(format!(
            "conv2d window {}x{} larger than padded input {}x{}",
            w.kernel_h,
            w.kernel_w,
            input.height() + 2 * pad,
            input.width() + 2 * pad
        ))
    })?;

    let icg = w.in_channels / w.groups;
    let ocg = w.out_channels / w.groups;
    let k = icg * w.kernel_h * w.kernel_w;
    let npix = out_h * out_w;

    let mut out = Tensor::zeros(out_h, out_w, w.out_channels);
    // im2col buffer for one group: k rows x npix cols, row-major.
    let mut cols = vec![0.0f64; k * npix];

    for g in 0..w.groups {
        let ic_base = g * icg;
        let oc_base = g * ocg;
        cols.iter_mut().for_each(|v| *v = 0.0);
        for ic in 0..icg {
            for ky in 0..w.kernel_h {
                for kx in 0..w.kernel_w {
                    let row = (ic * w.kernel_h + ky) * w.kernel_w + kx;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for oy in 0..out_h {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= input.height() as isize {
                            continue;
                        }
                        for ox in 0..out_w {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= input.width() as isize {
                                continue;
                            }
                            dst[oy * out_w + ox] =
                                input.get(iy as usize, ix as usize, ic_base + ic);
                        }
                    }
                }
            }
        }
        let a = &w.weights[oc_base * k..(oc_base + ocg) * k];
        // C[i, j] lands at data[j * out_c + oc_base + i]: rsc = 1, csc = out_c.
        unsafe {
            matrixmultiply::dgemm(
                ocg,
                k,
                npix,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                npix as isize,
                1,
                0.0,
                out.data.as_mut_ptr().add(oc_base),
                1,
                w.out_channels as isize,
            );
        }
    }

    for pix in 0..npix {
        for oc in 0..w.out_channels {
            out.data[pix * w.out_channels + oc] += w.bias[oc];
        }
    }
    Ok(out)
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        height: input.height,
        width: input.width,
        channels: input.channels,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Across-channel local response normalization.
///
/// `out(y,x,c) = in(y,x,c) / (k + (alpha/n) * sum_{c' in window} in(y,x,c')^2)^beta`
/// with the window of `n` channels centered on `c` and clipped to the valid
/// channel range.
pub fn lrn(input: &Tensor, n: usize, alpha: f64, beta: f64, k: f64) -> Result<Tensor> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::config(format!("lrn window size must be odd, got {n}")));
    }
    if k <= 0.0 {
        return Err(Error::config(format!("lrn k must be positive, got {k}")));
    }
    let half = n / 2;
    let ch = input.channels;
    let mut out = Tensor::zeros(input.height, input.width, ch);
    for pix in 0..input.height * input.width {
        let row = &input.data[pix * ch..(pix + 1) * ch];
        for c in 0..ch {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(ch - 1);
            let sum_sq: f64 = row[lo..=hi].iter().map(|v| v * v).sum();
            let denom = (k + alpha / n as f64 * sum_sq).powf(beta);
            out.data[pix * ch + c] = row[c] / denom;
        }
    }
    Ok(out)
}

/// Max pooling with zero-cost padding: padded positions never contribute to
/// the max, and windows extending past the padded boundary are clipped.
pub fn maxpool2d(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    pad: usize,
    ceil_mode: bool,
) -> Result<Tensor> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config("maxpool kernel and stride must be >= 1"));
    }
    let out_h = pool_out_dim(input.height, kernel, stride, pad, ceil_mode).ok_or_else(|| {
        Error::geometry(format!(
            "maxpool window {kernel} larger than padded input height {}",
            input.height + 2 * pad
        ))
    })?;
    let out_w = pool_out_dim(input.width, kernel, stride, pad, ceil_mode).ok_or_else(|| {
        Error::geometry(format!(
            "maxpool window {kernel} larger than padded input width {}",
            input.width + 2 * pad
        ))
    })?;
    let ch = input.channels;
    let mut out = Tensor::zeros(out_h, out_w, ch);
    for oy in 0..out_h {
        let y0 = (oy * stride) as isize - pad as isize;
        let ys = y0.max(0) as usize;
        let ye = ((y0 + kernel as isize) as usize).min(input.height);
        for ox in 0..out_w {
            let x0 = (ox * stride) as isize - pad as isize;
            let xs = x0.max(0) as usize;
            let xe = ((x0 + kernel as isize) as usize).min(input.width);
            if ys >= ye || xs >= xe {
                return Err(Error::geometry(format!(
                    "maxpool window at output ({oy},{ox}) covers no input positions"
                )));
            }
            for c in 0..ch {
                let mut m = f64::NEG_INFINITY;
                for y in ys..ye {
                    for x in xs..xe {
                        let v = input.get(y, x, c);
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.set(oy, ox, c, m);
            }
        }
    }
    Ok(out)
}
