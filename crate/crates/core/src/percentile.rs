//! Global nearest-rank percentile thresholding in native polar geometry.

use rayon::prelude::*;

use crate::cube::{power_map, PointCloud, PowerVolume3D, RadarTensor4D};
use crate::error::{Error, Result};

/// Percentile `r` in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Percentile(f64);

impl Percentile {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&r) {
            return Err(Error::Domain(format!("percentile {r} outside [0, 100]")));
        }
        Ok(Self(r))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Zero-based nearest-rank index `ceil(r/100 * n) - 1`, clamped to
    /// `[0, n-1]`. The product is snapped to an integer when it lies within
    /// 1e-9 relative of one, so decimal inputs such as 99.9 rank exactly.
    pub fn rank(self, n: usize) -> usize {
        debug_assert!(n > 0);
        let x = self.0 * n as f64 / 100.0;
        let nearest = x.round();
        let x = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            x
        };
        (x.ceil() as usize).saturating_sub(1).min(n - 1)
    }
}

impl TryFrom<f64> for Percentile {
    type Error = Error;
    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

/// Nearest-rank percentile of a non-empty slice via partial selection.
pub fn nearest_rank(values: &[f64], r: Percentile) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("percentile of an empty set".into()));
    }
    let k = r.rank(values.len());
    let mut scratch = values.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*kth)
}

pub fn percentile_threshold(volume: &PowerVolume3D, r: Percentile) -> Result<f64> {
    nearest_rank(volume.values(), r)
}

/// Row-major indices of cells with `value >= threshold`.
pub(crate) fn indices_at_or_above(values: &[f64], threshold: f64) -> Vec<usize> {
    const CHUNK: usize = 1 << 14;
    values
        .par_chunks(CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            chunk
                .iter()
                .enumerate()
                .filter(move |(_, &v)| v >= threshold)
                .map(move |(i, _)| c * CHUNK + i)
        })
        .collect()
}

/// Flat spatial indices kept by the polar percentile filter.
pub fn select_polar_percentile(volume: &PowerVolume3D, r: Percentile) -> Result<Vec<usize>> {
    let threshold = percentile_threshold(volume, r)?;
    Ok(indices_at_or_above(volume.values(), threshold))
}

pub fn filter_volume_percentile(volume: &PowerVolume3D, r: Percentile) -> Result<PointCloud> {
    let idx = select_polar_percentile(volume, r)?;
    Ok(volume.cloud_from_indices(&idx, "polar-percentile"))
}

/// Doppler collapse, global percentile threshold, then bin-center points.
pub fn filter_polar_percentile(tensor: &RadarTensor4D, r: Percentile) -> Result<PointCloud> {
    filter_volume_percentile(&power_map(tensor), r)
}
