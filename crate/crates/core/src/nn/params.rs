//! Parameter sets: seeded initialization, named-tensor traversal and the
//! NNPB parameter container.
//!
//! NNPB layout: magic `NNPB`, `u16` version, `u32` tensor count, then per
//! tensor a `u32` name length, UTF-8 name, `u32` rank, `u32` dims and the
//! values as little-endian `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{BatchNorm, Conv2d, ConvTranspose2d, LayerNorm, Linear};
use crate::container::{write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"NNPB";
pub const PARAMS_VERSION: u16 = 1;

/// Derives an independent child seed (SplitMix64 finalizer).
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic parameter source. Weights and biases are uniform in
/// `[-k, k]` with `k = 1/sqrt(fan_in)`.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(lo..hi)).collect()
    }

    pub fn conv(
        &mut self,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Conv2d {
        let k = 1.0 / ((in_channels * kernel * kernel) as f32).sqrt();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: self.uniform(out_channels * in_channels * kernel * kernel, -k, k),
            bias: self.uniform(out_channels, -k, k),
        }
    }

    pub fn conv_transpose(
        &mut self,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> ConvTranspose2d {
        let k = 1.0 / ((out_channels * kernel * kernel) as f32).sqrt();
        ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: self.uniform(in_channels * out_channels * kernel * kernel, -k, k),
            bias: self.uniform(out_channels, -k, k),
        }
    }

    pub fn linear(&mut self, in_features: usize, out_features: usize) -> Linear {
        let k = 1.0 / (in_features as f32).sqrt();
        Linear {
            in_features,
            out_features,
            weight: self.uniform(in_features * out_features, -k, k),
            bias: self.uniform(out_features, -k, k),
        }
    }

    pub fn batch_norm(&mut self, channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: self.uniform(channels, 0.8, 1.2),
            beta: self.uniform(channels, -0.1, 0.1),
            running_mean: self.uniform(channels, -0.1, 0.1),
            running_var: self.uniform(channels, 0.5, 1.5),
        }
    }

    pub fn layer_norm(&mut self, channels: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.uniform(channels, 0.8, 1.2),
            beta: self.uniform(channels, -0.1, 0.1),
        }
    }
}

/// Visitor over every named parameter tensor of a block.
pub trait NamedTensors {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32]));

    /// Sets every tensor to zero.
    fn zero_all(&mut self) {
        self.visit_mut("", &mut |_, _, v| v.fill(0.0));
    }

    /// Zeros additive offsets: biases, norm shifts and stored means.
    fn zero_offsets(&mut self) {
        self.visit_mut("", &mut |name, _, v| {
            if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("running_mean") {
                v.fill(0.0);
            }
        });
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit("", &mut |name, shape, v| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                values: v.to_vec(),
            })
        });
        out
    }

    /// Overwrites every tensor from `tensors`; names and shapes must match
    /// exactly and no tensor may be left over.
    fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut by_name: BTreeMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut err = None;
        self.visit_mut("", &mut |name, shape, dst| {
            if err.is_some() {
                return;
            }
            match by_name.remove(name) {
                None => err = Some(Error::Config(format!("missing parameter tensor {name}"))),
                Some(t) if t.shape != shape => {
                    err = Some(Error::Dimension(format!(
                        "{name}: file shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                Some(t) => dst.copy_from_slice(&t.values),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Config(format!("unexpected parameter tensor {extra}")));
        }
        Ok(())
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl NamedTensors for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        f(&join(prefix, "weight"), &self.weight_shape(), &self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        let ws = self.weight_shape();
        f(&join(prefix, "weight"), &ws, &mut self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &mut self.bias);
    }
}

impl NamedTensors for ConvTranspose2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        f(&join(prefix, "weight"), &self.weight_shape(), &self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        let ws = self.weight_shape();
        f(&join(prefix, "weight"), &ws, &mut self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &mut self.bias);
    }
}

impl NamedTensors for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        f(
            &join(prefix, "weight"),
            &[self.out_features, self.in_features],
            &self.weight,
        );
        f(&join(prefix, "bias"), &[self.out_features], &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        f(
            &join(prefix, "weight"),
            &[self.out_features, self.in_features],
            &mut self.weight,
        );
        f(&join(prefix, "bias"), &[self.out_features], &mut self.bias);
    }
}

impl NamedTensors for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        let s = [self.gamma.len()];
        f(&join(prefix, "gamma"), &s, &self.gamma);
        f(&join(prefix, "beta"), &s, &self.beta);
        f(&join(prefix, "running_mean"), &s, &self.running_mean);
        f(&join(prefix, "running_var"), &s, &self.running_var);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        let s = [self.gamma.len()];
        f(&join(prefix, "gamma"), &s, &mut self.gamma);
        f(&join(prefix, "beta"), &s, &mut self.beta);
        f(&join(prefix, "running_mean"), &s, &mut self.running_mean);
        f(&join(prefix, "running_var"), &s, &mut self.running_var);
    }
}

impl NamedTensors for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        let s = [self.gamma.len()];
        f(&join(prefix, "gamma"), &s, &self.gamma);
        f(&join(prefix, "beta"), &s, &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        let s = [self.gamma.len()];
        f(&join(prefix, "gamma"), &s, &mut self.gamma);
        f(&join(prefix, "beta"), &s, &mut self.beta);
    }
}

/// Implements [`NamedTensors`] for a struct by visiting its fields in order.
macro_rules! named_fields {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::nn::params::NamedTensors for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
                $( self.$field.visit(&$crate::nn::params::join_prefix(prefix, stringify!($field)), f); )+
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
                $( self.$field.visit_mut(&$crate::nn::params::join_prefix(prefix, stringify!($field)), f); )+
            }
        }
    };
}
pub(crate) use named_fields;

#[doc(hidden)]
pub fn join_prefix(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

impl<T: NamedTensors> NamedTensors for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for (i, t) in self.iter().enumerate() {
            t.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        for (i, t) in self.iter_mut().enumerate() {
            t.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_params_to<W: Write>(tensors: &[NamedTensor], w: W) -> Result<()> {
    let mut w = ByteWriter::new(w);
    w.bytes(PARAMS_MAGIC)?;
    w.u16(PARAMS_VERSION)?;
    w.len_u32(tensors.len(), "tensor count")?;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(Error::Dimension(format!(
                "{}: shape {:?} holds {} values",
                t.name,
                t.shape,
                t.values.len()
            )));
        }
        w.len_u32(t.name.len(), "name length")?;
        w.bytes(t.name.as_bytes())?;
        w.len_u32(t.shape.len(), "rank")?;
        for &d in &t.shape {
            w.len_u32(d, "dimension")?;
        }
        w.f32s(&t.values)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_params_from<R: Read>(r: R) -> Result<Vec<NamedTensor>> {
    let mut r = ByteReader::new(r);
    r.magic(PARAMS_MAGIC)?;
    r.version(PARAMS_VERSION)?;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let at = r.offset();
        let len = r.u32()? as usize;
        let mut name = vec![0u8; len];
        r.exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format(at + 4, "tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("{name}: shape overflows")))?;
        let values = r.f32s(count)?;
        out.push(NamedTensor {
            name,
            shape,
            values,
        });
    }
    r.expect_eof()?;
    Ok(out)
}

pub fn save_params(path: impl AsRef<Path>, block: &impl NamedTensors) -> Result<()> {
    let mut buf = Vec::new();
    write_params_to(&block.to_named(), &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}

pub fn load_params(path: impl AsRef<Path>, block: &mut impl NamedTensors) -> Result<()> {
    let f = std::fs::File::open(path)?;
    block.load_named(&read_params_from(std::io::BufReader::new(f))?)
}
