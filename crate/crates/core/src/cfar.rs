//! Cell-averaging CFAR over the polar power volume and the two-level
//! (CFAR + per-range-ring percentile) pre-processing.
//!
//! The window around a cell under test spans `training + guard` cells on
//! each side of every active axis. Training cells are the window minus the
//! guard box (which contains the cell under test). A cell is detected iff
//! its power is strictly greater than `scale_alpha` times the training
//! mean. Cells whose window would leave the grid are never detected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{power_map, PointCloud, PowerVolume3D, RadarTensor4D};
use crate::error::{Error, Result};
use crate::percentile::{nearest_rank, Percentile};

/// Threshold multiplier on the training mean that yields false-alarm
/// probability `pfa` on exponential noise with `n` training cells:
/// `pfa = (1 + alpha/n)^-n`.
pub fn alpha_for_pfa(pfa: f64, n: usize) -> f64 {
    let n = n as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// Closed-form false-alarm probability for multiplier `alpha`.
pub fn pfa_for_alpha(alpha: f64, n: usize) -> f64 {
    let n = n as f64;
    (1.0 + alpha / n).powf(-n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfarConfig {
    /// Training cells per side along (azimuth, range, elevation).
    pub training_cells: [usize; 3],
    /// Guard cells per side along (azimuth, range, elevation).
    pub guard_cells: [usize; 3],
    pub scale_alpha: f64,
    /// Which of (azimuth, range, elevation) the window spans.
    pub axes: [bool; 3],
}

impl Default for CfarConfig {
    /// Azimuth x range window, 8 training and 2 guard cells per side,
    /// multiplier set for a 1e-3 false-alarm rate.
    fn default() -> Self {
        Self::azimuth_range(8, 2, 1e-3)
    }
}

impl CfarConfig {
    /// Window over azimuth and range with the multiplier derived from a
    /// target false-alarm probability.
    pub fn azimuth_range(training: usize, guard: usize, pfa: f64) -> Self {
        let mut cfg = Self {
            training_cells: [training, training, 0],
            guard_cells: [guard, guard, 0],
            scale_alpha: 1.0,
            axes: [true, true, false],
        };
        cfg.scale_alpha = alpha_for_pfa(pfa, cfg.num_training());
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !self.axes.iter().any(|&a| a) {
            return Err(Error::Config("CFAR window must span at least one axis".into()));
        }
        for ax in 0..3 {
            if self.axes[ax] && self.training_cells[ax] == 0 {
                return Err(Error::Config(format!(
                    "training_cells[{ax}] must be >= 1 on an active axis"
                )));
            }
        }
        if !(self.scale_alpha > 0.0 && self.scale_alpha.is_finite()) {
            return Err(Error::Config("scale_alpha must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Half-width of the full window per axis (0 on inactive axes).
    pub fn outer(&self) -> [usize; 3] {
        std::array::from_fn(|ax| {
            if self.axes[ax] {
                self.training_cells[ax] + self.guard_cells[ax]
            } else {
                0
            }
        })
    }

    /// Half-width of the guard box per axis.
    pub fn inner(&self) -> [usize; 3] {
        std::array::from_fn(|ax| if self.axes[ax] { self.guard_cells[ax] } else { 0 })
    }

    pub fn num_training(&self) -> usize {
        let o: usize = self.outer().iter().map(|h| 2 * h + 1).product();
        let i: usize = self.inner().iter().map(|h| 2 * h + 1).product();
        o - i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlpConfig {
    pub coarse: CfarConfig,
    /// Percentile applied per range ring to the coarse survivors.
    pub second_stage_r: f64,
}

impl Default for TlpConfig {
    /// Permissive coarse stage (1e-1 false-alarm rate) followed by a
    /// per-ring median.
    fn default() -> Self {
        Self {
            coarse: CfarConfig::azimuth_range(8, 2, 1e-1),
            second_stage_r: 50.0,
        }
    }
}

/// Summed-area table over (azimuth, range, elevation) with a zero border.
struct SummedVolume {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl SummedVolume {
    fn new(volume: &PowerVolume3D) -> Self {
        let g = volume.grid();
        let (na, nr, ne) = (g.n_azimuth, g.n_range, g.n_elevation);
        let (sr, se) = (nr + 1, ne + 1);
        let mut t = vec![0f64; (na + 1) * sr * se];
        let at = |a: usize, r: usize, e: usize| (a * sr + r) * se + e;
        for a in 1..=na {
            for r in 1..=nr {
                for e in 1..=ne {
                    let v = volume.get(a - 1, r - 1, e - 1);
                    t[at(a, r, e)] = v + t[at(a - 1, r, e)] + t[at(a, r - 1, e)]
                        + t[at(a, r, e - 1)]
                        - t[at(a - 1, r - 1, e)]
                        - t[at(a - 1, r, e - 1)]
                        - t[at(a, r - 1, e - 1)]
                        + t[at(a - 1, r - 1, e - 1)];
                }
            }
        }
        Self {
            dims: [na, nr, ne],
            table: t,
        }
    }

    /// Sum over the half-open box `[lo, hi)`.
    fn box_sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let (sr, se) = (self.dims[1] + 1, self.dims[2] + 1);
        let t = |a: usize, r: usize, e: usize| self.table[(a * sr + r) * se + e];
        t(hi[0], hi[1], hi[2]) - t(lo[0], hi[1], hi[2]) - t(hi[0], lo[1], hi[2])
            - t(hi[0], hi[1], lo[2])
            + t(lo[0], lo[1], hi[2])
            + t(lo[0], hi[1], lo[2])
            + t(hi[0], lo[1], lo[2])
            - t(lo[0], lo[1], lo[2])
    }
}

/// Row-major flat indices of CFAR detections.
pub fn ca_cfar_indices(volume: &PowerVolume3D, cfg: &CfarConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let g = *volume.grid();
    let dims = [g.n_azimuth, g.n_range, g.n_elevation];
    let outer = cfg.outer();
    let inner = cfg.inner();
    for ax in 0..3 {
        if 2 * outer[ax] + 1 > dims[ax] {
            return Err(Error::Config(format!(
                "CFAR window ({} cells) exceeds grid axis {ax} ({} cells) on every cell",
                2 * outer[ax] + 1,
                dims[ax]
            )));
        }
    }
    let sums = SummedVolume::new(volume);
    let n_train = cfg.num_training() as f64;
    let alpha = cfg.scale_alpha;

    let per_azimuth: Vec<Vec<usize>> = (outer[0]..dims[0] - outer[0])
        .into_par_iter()
        .map(|a| {
            let mut hits = Vec::new();
            for r in outer[1]..dims[1] - outer[1] {
                for e in outer[2]..dims[2] - outer[2] {
                    let c = [a, r, e];
                    let window = sums.box_sum(
                        std::array::from_fn(|ax| c[ax] - outer[ax]),
                        std::array::from_fn(|ax| c[ax] + outer[ax] + 1),
                    );
                    let guard = sums.box_sum(
                        std::array::from_fn(|ax| c[ax] - inner[ax]),
                        std::array::from_fn(|ax| c[ax] + inner[ax] + 1),
                    );
                    let mean = (window - guard) / n_train;
                    let idx = g.spatial_index(a, r, e);
                    if volume.values()[idx] > alpha * mean {
                        hits.push(idx);
                    }
                }
            }
            hits
        })
        .collect();
    Ok(per_azimuth.into_iter().flatten().collect())
}

pub fn ca_cfar(volume: &PowerVolume3D, cfg: &CfarConfig) -> Result<PointCloud> {
    let idx = ca_cfar_indices(volume, cfg)?;
    Ok(volume.cloud_from_indices(&idx, "cfar"))
}

/// Stage-1 CFAR survivors filtered per range ring by a nearest-rank
/// percentile pooled over azimuth and elevation.
pub fn two_level_indices(volume: &PowerVolume3D, cfg: &TlpConfig) -> Result<Vec<usize>> {
    let r = Percentile::new(cfg.second_stage_r)?;
    let coarse = ca_cfar_indices(volume, &cfg.coarse)?;
    let g = volume.grid();
    let mut rings: Vec<Vec<f64>> = vec![Vec::new(); g.n_range];
    for &i in &coarse {
        rings[g.unravel_spatial(i)[1]].push(volume.values()[i]);
    }
    let thresholds: Vec<Option<f64>> = rings
        .iter()
        .map(|ring| {
            if ring.is_empty() {
                Ok(None)
            } else {
                nearest_rank(ring, r).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    Ok(coarse
        .into_iter()
        .filter(|&i| {
            let t = thresholds[g.unravel_spatial(i)[1]].expect("ring has survivors");
            volume.values()[i] >= t
        })
        .collect())
}

pub fn two_level_volume(volume: &PowerVolume3D, cfg: &TlpConfig) -> Result<PointCloud> {
    let idx = two_level_indices(volume, cfg)?;
    Ok(volume.cloud_from_indices(&idx, "tlp"))
}

pub fn two_level_preproc(tensor: &RadarTensor4D, cfg: &TlpConfig) -> Result<PointCloud> {
    two_level_volume(&power_map(tensor), cfg)
}
