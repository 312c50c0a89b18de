//! Aggregation and densify forward passes.
//!
//! * Alignment: 1x1 conv + BN + ReLU (768 -> 256), a ConvNeXt-style
//!   residual block of three 1x1 convs (256 -> 256 -> 768 -> 256, LayerNorm
//!   after the first, GELU after the second), then 1x1 conv + BN + ReLU
//!   (256 -> 128).
//! * CBAM: channel gate from a shared two-layer MLP over average and max
//!   pooled descriptors, then a spatial gate from a 7x7 conv over the
//!   channel-mean and channel-max maps.
//! * Aggregate: per-teacher alignment, channel concat, CBAM, 1x1 conv.
//! * Densify: input projection, two encoder-decoder passes, separate fusion
//!   convs for the refined and the original sparse feature, conv head.

use super::ops::{
    batch_norm_inference, channel_avg_pool, channel_max_pool, conv2d, conv_transpose2d, gelu,
    global_avg_pool, global_max_pool, layer_norm, linear, relu, sigmoid, BatchNorm, Conv2d,
    ConvTranspose2d, LayerNorm, Linear,
};
use super::params::{child_seed, named_fields, ParamInit};
use super::tensor::TensorCHW;
use crate::error::{Error, Result};

pub const TEACHER_CHANNELS: usize = 768;
pub const ALIGN_HIDDEN: usize = 256;
pub const ALIGN_EXPANDED: usize = 768;
pub const ALIGN_OUT: usize = 128;
pub const NUM_TEACHERS: usize = 3;
pub const CBAM_REDUCTION: usize = 8;
pub const SPATIAL_KERNEL: usize = 7;

/// Channel widths of the alignment block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentWidths {
    pub input: usize,
    pub hidden: usize,
    pub expanded: usize,
    pub output: usize,
}

impl Default for AlignmentWidths {
    fn default() -> Self {
        Self {
            input: TEACHER_CHANNELS,
            hidden: ALIGN_HIDDEN,
            expanded: ALIGN_EXPANDED,
            output: ALIGN_OUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    pub reduce: Conv2d,
    pub reduce_bn: BatchNorm,
    pub mix: Conv2d,
    pub mix_norm: LayerNorm,
    pub expand: Conv2d,
    pub contract: Conv2d,
    pub project: Conv2d,
    pub project_bn: BatchNorm,
}

named_fields!(AlignmentParams {
    reduce,
    reduce_bn,
    mix,
    mix_norm,
    expand,
    contract,
    project,
    project_bn
});

impl AlignmentParams {
    pub fn seeded(widths: AlignmentWidths, seed: u64) -> Self {
        let mut p = ParamInit::new(seed);
        let AlignmentWidths {
            input,
            hidden,
            expanded,
            output,
        } = widths;
        Self {
            reduce: p.conv(input, hidden, 1, 1, 0),
            reduce_bn: p.batch_norm(hidden),
            mix: p.conv(hidden, hidden, 1, 1, 0),
            mix_norm: p.layer_norm(hidden),
            expand: p.conv(hidden, expanded, 1, 1, 0),
            contract: p.conv(expanded, hidden, 1, 1, 0),
            project: p.conv(hidden, output, 1, 1, 0),
            project_bn: p.batch_norm(output),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.reduce.in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.project.out_channels
    }
}

pub fn alignment_block_forward(f: &TensorCHW, p: &AlignmentParams) -> Result<TensorCHW> {
    if f.channels() != p.input_channels() {
        return Err(Error::Dimension(format!(
            "alignment block expects {} channels, got {}",
            p.input_channels(),
            f.channels()
        )));
    }
    let x = batch_norm_inference(&conv2d(f, &p.reduce)?, &p.reduce_bn)?.map(relu);
    let y = layer_norm(&conv2d(&x, &p.mix)?, &p.mix_norm)?;
    let y = conv2d(&y, &p.expand)?.map(gelu);
    let y = conv2d(&y, &p.contract)?;
    let x = x.add(&y)?;
    Ok(batch_norm_inference(&conv2d(&x, &p.project)?, &p.project_bn)?.map(relu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbamParams {
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub spatial: Conv2d,
    pub spatial_bn: BatchNorm,
}

named_fields!(CbamParams {
    mlp_in,
    mlp_out,
    spatial,
    spatial_bn
});

impl CbamParams {
    pub fn seeded(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 || channels % CBAM_REDUCTION != 0 {
            return Err(Error::Config(format!(
                "CBAM channels {channels} not divisible by reduction ratio {CBAM_REDUCTION}"
            )));
        }
        let mut p = ParamInit::new(seed);
        let hidden = channels / CBAM_REDUCTION;
        Ok(Self {
            mlp_in: p.linear(channels, hidden),
            mlp_out: p.linear(hidden, channels),
            spatial: p.conv(2, 1, SPATIAL_KERNEL, 1, SPATIAL_KERNEL / 2),
            spatial_bn: p.batch_norm(1),
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp_in.in_features
    }
}

/// Gates are squashed into the open interval `(0, 1)` even where f32
/// sigmoid would round to an endpoint.
fn gate(x: f32) -> f32 {
    sigmoid(x).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

/// Channel gate (one value per channel) and spatial gate (1 x H x W map
/// computed on the channel-gated input).
pub fn cbam_gates(f: &TensorCHW, p: &CbamParams) -> Result<(Vec<f32>, TensorCHW)> {
    if f.channels() != p.channels() {
        return Err(Error::Config(format!(
            "CBAM built for {} channels, got {}",
            p.channels(),
            f.channels()
        )));
    }
    let mlp = |v: Vec<f32>| -> Result<Vec<f32>> {
        let h: Vec<f32> = linear(&v, &p.mlp_in)?.into_iter().map(relu).collect();
        linear(&h, &p.mlp_out)
    };
    let a = mlp(global_avg_pool(f))?;
    let m = mlp(global_max_pool(f))?;
    let channel_gate: Vec<f32> = a.iter().zip(&m).map(|(x, y)| gate(x + y)).collect();
    let gated = scale_channels(f, &channel_gate);
    let pooled = TensorCHW::concat_channels(&[channel_avg_pool(&gated), channel_max_pool(&gated)])?;
    let s = batch_norm_inference(&conv2d(&pooled, &p.spatial)?, &p.spatial_bn)?.map(gate);
    Ok((channel_gate, s))
}

fn scale_channels(f: &TensorCHW, scales: &[f32]) -> TensorCHW {
    let n = f.plane_len();
    let mut data = f.data().to_vec();
    for (plane, &s) in data.chunks_mut(n.max(1)).zip(scales) {
        plane.iter_mut().for_each(|v| *v *= s);
    }
    TensorCHW::from_raw(f.channels(), f.height(), f.width(), data)
}

pub fn cbam_forward(f: &TensorCHW, p: &CbamParams) -> Result<TensorCHW> {
    let (channel_gate, spatial_gate) = cbam_gates(f, p)?;
    let mut out = scale_channels(f, &channel_gate);
    let n = out.plane_len();
    for plane in out.data_mut().chunks_mut(n.max(1)) {
        for (v, s) in plane.iter_mut().zip(spatial_gate.data()) {
            *v *= s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateParams {
    pub teachers: Vec<AlignmentParams>,
    pub cbam: CbamParams,
    pub fuse: Conv2d,
}

named_fields!(AggregateParams {
    teachers,
    cbam,
    fuse
});

impl AggregateParams {
    /// Three independent alignment blocks, CBAM over the 384-channel concat
    /// and a final 1x1 conv to `fused_channels`.
    pub fn seeded(fused_channels: usize, seed: u64) -> Result<Self> {
        Self::seeded_with(AlignmentWidths::default(), fused_channels, seed)
    }

    pub fn seeded_with(widths: AlignmentWidths, fused_channels: usize, seed: u64) -> Result<Self> {
        if fused_channels == 0 {
            return Err(Error::Config("fused width must be >= 1".into()));
        }
        let teachers = (0..NUM_TEACHERS as u64)
            .map(|i| AlignmentParams::seeded(widths, child_seed(seed, i)))
            .collect();
        let concat = NUM_TEACHERS * widths.output;
        Ok(Self {
            teachers,
            cbam: CbamParams::seeded(concat, child_seed(seed, 100))?,
            fuse: ParamInit::new(child_seed(seed, 101)).conv(concat, fused_channels, 1, 1, 0),
        })
    }

    pub fn fused_channels(&self) -> usize {
        self.fuse.out_channels
    }

    /// Parameters for teachers presented in the order `perm` (teacher `j`
    /// of the result is teacher `perm[j]` of `self`), with every
    /// channel-indexed downstream weight permuted to match.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.teachers.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Config(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let block = self.cbam.channels() / n;
        // new channel c maps to old channel src(c)
        let src = |c: usize| perm[c / block] * block + c % block;
        let total = n * block;

        let mut out = self.clone();
        out.teachers = perm.iter().map(|&i| self.teachers[i].clone()).collect();

        let hidden = self.cbam.mlp_in.out_features;
        for h in 0..hidden {
            for c in 0..total {
                out.cbam.mlp_in.weight[h * total + c] = self.cbam.mlp_in.weight[h * total + src(c)];
            }
        }
        for c in 0..total {
            let (dst, from) = (c * hidden, src(c) * hidden);
            out.cbam.mlp_out.weight[dst..dst + hidden]
                .copy_from_slice(&self.cbam.mlp_out.weight[from..from + hidden]);
            out.cbam.mlp_out.bias[c] = self.cbam.mlp_out.bias[src(c)];
        }
        for o in 0..self.fuse.out_channels {
            for c in 0..total {
                out.fuse.weight[o * total + c] = self.fuse.weight[o * total + src(c)];
            }
        }
        Ok(out)
    }
}

/// `Conv1x1(CBAM(Concat(Align_i(F_i))))` over exactly three teachers.
pub fn aggregate(teachers: &[TensorCHW], p: &AggregateParams) -> Result<TensorCHW> {
    if teachers.len() != p.teachers.len() {
        return Err(Error::Config(format!(
            "expected {} teacher features, got {}",
            p.teachers.len(),
            teachers.len()
        )));
    }
    let (h, w) = (teachers[0].height(), teachers[0].width());
    if let Some(t) = teachers.iter().find(|t| (t.height(), t.width()) != (h, w)) {
        return Err(Error::Dimension(format!(
            "teacher spatial dims {}x{} vs {h}x{w}",
            t.height(),
            t.width()
        )));
    }
    let aligned = teachers
        .iter()
        .zip(&p.teachers)
        .map(|(t, tp)| alignment_block_forward(t, tp))
        .collect::<Result<Vec<_>>>()?;
    let fused = cbam_forward(&TensorCHW::concat_channels(&aligned)?, &p.cbam)?;
    conv2d(&fused, &p.fuse)
}

/// ConvNeXt-style residual: `x + W2 gelu(W1 LN(conv3x3(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub spatial: Conv2d,
    pub norm: LayerNorm,
    pub expand: Conv2d,
    pub contract: Conv2d,
}

named_fields!(ResidualBlock {
    spatial,
    norm,
    expand,
    contract
});

impl ResidualBlock {
    fn seeded(channels: usize, expansion: usize, p: &mut ParamInit) -> Self {
        Self {
            spatial: p.conv(channels, channels, 3, 1, 1),
            norm: p.layer_norm(channels),
            expand: p.conv(channels, channels * expansion, 1, 1, 0),
            contract: p.conv(channels * expansion, channels, 1, 1, 0),
        }
    }

    fn forward(&self, x: &TensorCHW) -> Result<TensorCHW> {
        let y = layer_norm(&conv2d(x, &self.spatial)?, &self.norm)?;
        let y = conv2d(&y, &self.expand)?.map(gelu);
        x.add(&conv2d(&y, &self.contract)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownStage {
    pub down: Conv2d,
    pub down_bn: BatchNorm,
    pub block: ResidualBlock,
}

named_fields!(DownStage {
    down,
    down_bn,
    block
});

#[derive(Debug, Clone, PartialEq)]
pub struct UpStage {
    pub up: ConvTranspose2d,
    pub up_bn: BatchNorm,
}

named_fields!(UpStage { up, up_bn });

/// One encoder-decoder pass at constant channel width.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoder {
    pub encoder: Vec<DownStage>,
    pub decoder: Vec<UpStage>,
}

named_fields!(EncoderDecoder { encoder, decoder });

impl EncoderDecoder {
    fn seeded(channels: usize, depth: usize, expansion: usize, p: &mut ParamInit) -> Self {
        let encoder = (0..depth)
            .map(|_| DownStage {
                down: p.conv(channels, channels, 3, 2, 1),
                down_bn: p.batch_norm(channels),
                block: ResidualBlock::seeded(channels, expansion, p),
            })
            .collect();
        let decoder = (0..depth)
            .map(|_| UpStage {
                up: p.conv_transpose(channels, channels, 2, 2, 0),
                up_bn: p.batch_norm(channels),
            })
            .collect();
        Self { encoder, decoder }
    }

    fn forward(&self, x: &TensorCHW) -> Result<TensorCHW> {
        let mut x = x.clone();
        for s in &self.encoder {
            x = batch_norm_inference(&conv2d(&x, &s.down)?, &s.down_bn)?.map(relu);
            x = s.block.forward(&x)?;
        }
        for s in &self.decoder {
            x = batch_norm_inference(&conv_transpose2d(&x, &s.up)?, &s.up_bn)?.map(relu);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    /// Number of 2x downsampling stages per pass.
    pub depth: usize,
    pub expansion: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            in_channels: TEACHER_CHANNELS,
            hidden: 128,
            out_channels: ALIGN_OUT,
            depth: 2,
            expansion: 2,
        }
    }
}

impl DensifyConfig {
    pub fn downsampling(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyParams {
    pub config: DensifyConfig,
    pub input_proj: Conv2d,
    pub passes: Vec<EncoderDecoder>,
    pub fuse_dense: Conv2d,
    pub fuse_sparse: Conv2d,
    pub head: Conv2d,
    pub head_bn: BatchNorm,
    pub head_out: Conv2d,
}

named_fields!(DensifyParams {
    input_proj,
    passes,
    fuse_dense,
    fuse_sparse,
    head,
    head_bn,
    head_out
});

impl DensifyParams {
    pub fn seeded(config: DensifyConfig, seed: u64) -> Result<Self> {
        if config.in_channels == 0 || config.hidden == 0 || config.out_channels == 0 {
            return Err(Error::Config("densify widths must be >= 1".into()));
        }
        if config.expansion == 0 {
            return Err(Error::Config("densify expansion must be >= 1".into()));
        }
        let mut p = ParamInit::new(seed);
        let (c_in, c) = (config.in_channels, config.hidden);
        Ok(Self {
            config,
            input_proj: p.conv(c_in, c, 1, 1, 0),
            passes: (0..2)
                .map(|_| EncoderDecoder::seeded(c, config.depth, config.expansion, &mut p))
                .collect(),
            fuse_dense: p.conv(c, c, 1, 1, 0),
            fuse_sparse: p.conv(c_in, c, 1, 1, 0),
            head: p.conv(c, c, 3, 1, 1),
            head_bn: p.batch_norm(c),
            head_out: p.conv(c, config.out_channels, 1, 1, 0),
        })
    }
}

/// Dual-pass encoder-decoder densification of a sparse student feature.
pub fn densify_forward(f_sparse: &TensorCHW, p: &DensifyParams) -> Result<TensorCHW> {
    let cfg = &p.config;
    if f_sparse.channels() != cfg.in_channels {
        return Err(Error::Dimension(format!(
            "densify expects {} channels, got {}",
            cfg.in_channels,
            f_sparse.channels()
        )));
    }
    let k = cfg.downsampling();
    if f_sparse.height() % k != 0 || f_sparse.width() % k != 0 || f_sparse.height() == 0 {
        return Err(Error::Config(format!(
            "spatial dims {}x{} not divisible by the encoder downsampling factor {k}",
            f_sparse.height(),
            f_sparse.width()
        )));
    }
    let mut x = conv2d(f_sparse, &p.input_proj)?;
    for pass in &p.passes {
        x = pass.forward(&x)?;
    }
    let fused = conv2d(&x, &p.fuse_dense)?.add(&conv2d(f_sparse, &p.fuse_sparse)?)?;
    let y = batch_norm_inference(&conv2d(&fused, &p.head)?, &p.head_bn)?.map(relu);
    conv2d(&y, &p.head_out)
}
