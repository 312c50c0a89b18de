//! Inference-mode tensor primitives.
//!
//! Convolutions parallelize over output channels; each output value is
//! accumulated in a fixed order, so results do not depend on the thread
//! count.

use rayon::prelude::*;

use super::tensor::TensorCHW;
use crate::error::{Error, Result};

pub const NORM_EPS: f32 = 1e-5;

/// 2D cross-correlation layer. Weight layout `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if k == 0 || s == 0 {
            return Err(Error::Config("kernel and stride must be >= 1".into()));
        }
        if height + 2 * p < k || width + 2 * p < k {
            return Err(Error::Dimension(format!(
                "{k}x{k} kernel does not fit {height}x{width} input with padding {p}"
            )));
        }
        Ok(((height + 2 * p - k) / s + 1, (width + 2 * p - k) / s + 1))
    }

    fn check_input(&self, input: &TensorCHW) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        if self.weight.len() != self.weight_shape().iter().product::<usize>()
            || self.bias.len() != self.out_channels
        {
            return Err(Error::Dimension("conv parameter lengths disagree with shape".into()));
        }
        Ok(())
    }
}

pub fn conv2d(input: &TensorCHW, conv: &Conv2d) -> Result<TensorCHW> {
    conv.check_input(input)?;
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = conv.output_size(h, w)?;
    let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
    let cin = conv.in_channels;
    let plane = oh * ow;
    let mut out = vec![0f32; conv.out_channels * plane];

    if k == 1 && s == 1 && p == 0 {
        out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
            dst.fill(conv.bias[o]);
            let wrow = &conv.weight[o * cin..(o + 1) * cin];
            for (i, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                for (d, &x) in dst.iter_mut().zip(input.plane(i)) {
                    *d += wv * x;
                }
            }
        });
        return Ok(TensorCHW::from_raw(conv.out_channels, oh, ow, out));
    }

    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(conv.bias[o]);
        for i in 0..cin {
            let src = input.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = conv.weight[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d += wv * srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(TensorCHW::from_raw(conv.out_channels, oh, ow, out))
}

/// Transposed convolution. Weight layout `[in][out][k][k]`; output size
/// `(H - 1) * stride - 2 * padding + kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvTranspose2d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; in_channels * out_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel, self.kernel]
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if k == 0 || s == 0 || height == 0 || width == 0 {
            return Err(Error::Config("kernel, stride and input must be nonempty".into()));
        }
        let full_h = (height - 1) * s + k;
        let full_w = (width - 1) * s + k;
        if full_h <= 2 * p || full_w <= 2 * p {
            return Err(Error::Dimension(format!("padding {p} consumes the whole output")));
        }
        Ok((full_h - 2 * p, full_w - 2 * p))
    }
}

pub fn conv_transpose2d(input: &TensorCHW, deconv: &ConvTranspose2d) -> Result<TensorCHW> {
    if input.channels() != deconv.in_channels {
        return Err(Error::Dimension(format!(
            "transposed conv expects {} input channels, got {}",
            deconv.in_channels,
            input.channels()
        )));
    }
    if deconv.weight.len() != deconv.weight_shape().iter().product::<usize>()
        || deconv.bias.len() != deconv.out_channels
    {
        return Err(Error::Dimension(
            "transposed conv parameter lengths disagree with shape".into(),
        ));
    }
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = deconv.output_size(h, w)?;
    let (k, s, p) = (deconv.kernel, deconv.stride, deconv.padding);
    let cout = deconv.out_channels;
    let plane = oh * ow;
    let mut out = vec![0f32; cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(deconv.bias[o]);
        for i in 0..deconv.in_channels {
            let src = input.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = deconv.weight[((i * cout + o) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..h {
                        let oy = (iy * s + ky) as isize - p as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for ix in 0..w {
                            let ox = (ix * s + kx) as isize - p as isize;
                            if ox >= 0 && ox < ow as isize {
                                dst[oy as usize * ow + ox as usize] += wv * src[iy * w + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(TensorCHW::from_raw(cout, oh, ow, out))
}

/// Batch normalization with stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

pub fn batch_norm_inference(input: &TensorCHW, bn: &BatchNorm) -> Result<TensorCHW> {
    let c = input.channels();
    if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
        .iter()
        .any(|v| v.len() != c)
    {
        return Err(Error::Dimension(format!(
            "batch norm over {} channels applied to {c}",
            bn.channels()
        )));
    }
    let n = input.plane_len();
    let mut out = input.data().to_vec();
    for (ch, dst) in out.chunks_mut(n.max(1)).enumerate().take(c) {
        let scale = bn.gamma[ch] / (bn.running_var[ch] + NORM_EPS).sqrt();
        let shift = bn.beta[ch] - bn.running_mean[ch] * scale;
        dst.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(TensorCHW::from_raw(c, input.height(), input.width(), out))
}

/// Layer normalization across channels at every spatial position, with a
/// per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }
}

pub fn layer_norm(input: &TensorCHW, ln: &LayerNorm) -> Result<TensorCHW> {
    let c = input.channels();
    if ln.gamma.len() != c || ln.beta.len() != c {
        return Err(Error::Dimension(format!(
            "layer norm over {} channels applied to {c}",
            ln.gamma.len()
        )));
    }
    let n = input.plane_len();
    let mut mean = vec![0f64; n];
    for ch in 0..c {
        for (m, &v) in mean.iter_mut().zip(input.plane(ch)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut var = vec![0f64; n];
    for ch in 0..c {
        for ((s, &v), m) in var.iter_mut().zip(input.plane(ch)).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / c as f64 + NORM_EPS as f64).sqrt())
        .collect();
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        let (g, b) = (ln.gamma[ch] as f64, ln.beta[ch] as f64);
        out.extend(
            input
                .plane(ch)
                .iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((&v, m), is)| ((v as f64 - m) * is * g + b) as f32),
        );
    }
    Ok(TensorCHW::from_raw(c, input.height(), input.width(), out))
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// Exact (erf) GELU.
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

/// Fully connected layer, weight layout `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }
}

pub fn linear(input: &[f32], layer: &Linear) -> Result<Vec<f32>> {
    if input.len() != layer.in_features {
        return Err(Error::Dimension(format!(
            "linear expects {} features, got {}",
            layer.in_features,
            input.len()
        )));
    }
    Ok(layer
        .weight
        .chunks_exact(layer.in_features)
        .zip(&layer.bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f32>())
        .collect())
}

/// Spatial mean per channel.
pub fn global_avg_pool(input: &TensorCHW) -> Vec<f32> {
    let n = input.plane_len() as f64;
    (0..input.channels())
        .map(|c| (input.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect()
}

/// Spatial max per channel.
pub fn global_max_pool(input: &TensorCHW) -> Vec<f32> {
    (0..input.channels())
        .map(|c| input.plane(c).iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect()
}

/// Mean over channels at each position, as a 1-channel map.
pub fn channel_avg_pool(input: &TensorCHW) -> TensorCHW {
    let n = input.plane_len();
    let mut acc = vec![0f64; n];
    for c in 0..input.channels() {
        for (a, &v) in acc.iter_mut().zip(input.plane(c)) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / input.channels() as f64;
    TensorCHW::from_raw(
        1,
        input.height(),
        input.width(),
        acc.into_iter().map(|a| (a * inv) as f32).collect(),
    )
}

/// Max over channels at each position, as a 1-channel map.
pub fn channel_max_pool(input: &TensorCHW) -> TensorCHW {
    let mut acc = vec![f32::NEG_INFINITY; input.plane_len()];
    for c in 0..input.channels() {
        for (a, &v) in acc.iter_mut().zip(input.plane(c)) {
            *a = a.max(v);
        }
    }
    TensorCHW::from_raw(1, input.height(), input.width(), acc)
}
