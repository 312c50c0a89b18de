use crate::error::{Error, Result};

/// Dense channel-major feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCHW {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TensorCHW {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite tensor value at {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Wraps data produced by a primitive without re-checking finiteness.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
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

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Element-wise sum of two equally shaped tensors.
    pub fn add(&self, other: &TensorCHW) -> Result<TensorCHW> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[TensorCHW]) -> Result<TensorCHW> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(p) = parts.iter().find(|p| (p.height, p.width) != (h, w)) {
            return Err(Error::Dimension(format!(
                "spatial dims {}x{} vs {h}x{w}",
                p.height, p.width
            )));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(channels, h, w, data))
    }

    pub fn max_abs_diff(&self, other: &TensorCHW) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
