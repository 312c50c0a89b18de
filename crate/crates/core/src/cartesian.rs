//! Polar-to-Cartesian resampling onto a regular voxel grid and percentile
//! filtering in voxel space.
//!
//! Each voxel center is mapped back to polar coordinates and trilinearly
//! interpolated from the eight surrounding polar bin centers. Voxels whose
//! center falls outside the hull of polar bin centers are invalid and take
//! no part in any statistic.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{write_atomic, ByteReader, ByteWriter};
use crate::cube::{cartesian_to_polar, PointCloud, PolarCoord, PowerVolume3D, RadarPoint};
use crate::error::{Error, Result};
use crate::percentile::{nearest_rank, Percentile};

pub const VOXEL_MAGIC: &[u8; 4] = b"CVOX";
pub const VOXEL_VERSION: u16 = 1;

/// Axis-aligned region of interest split into voxels. Storage order is
/// row-major over (x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGridSpec {
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    pub z_bounds: [f64; 2],
    pub voxel_size: [f64; 3],
}

impl Default for CartesianGridSpec {
    /// x in [0, 72], y in [-16, 16], z in [-2, 7.6] meters at 0.4 m.
    fn default() -> Self {
        Self::with_voxel(0.4)
    }
}

impl CartesianGridSpec {
    /// The default region of interest with cubic voxels of side `size`.
    pub fn with_voxel(size: f64) -> Self {
        Self {
            x_bounds: [0.0, 72.0],
            y_bounds: [-16.0, 16.0],
            z_bounds: [-2.0, 7.6],
            voxel_size: [size; 3],
        }
    }

    fn bounds(&self) -> [[f64; 2]; 3] {
        [self.x_bounds, self.y_bounds, self.z_bounds]
    }

    pub fn validate(&self) -> Result<()> {
        for (ax, (b, s)) in self.bounds().iter().zip(self.voxel_size).enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[1] > b[0]) {
                return Err(Error::Config(format!("axis {ax}: bounds must be nonempty")));
            }
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("axis {ax}: voxel size must be > 0")));
            }
        }
        Ok(())
    }

    /// Voxel counts per axis; extents are rounded up to whole voxels, with a
    /// 1e-9 slack so exact multiples do not gain a spurious voxel.
    pub fn dims(&self) -> [usize; 3] {
        let mut d = [0; 3];
        for (ax, (b, s)) in self.bounds().iter().zip(self.voxel_size).enumerate() {
            d[ax] = (((b[1] - b[0]) / s) - 1e-9).ceil().max(1.0) as usize;
        }
        d
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume_m3(&self) -> f64 {
        self.bounds().iter().map(|b| b[1] - b[0]).product()
    }

    pub fn center(&self, i: [usize; 3]) -> [f64; 3] {
        let b = self.bounds();
        std::array::from_fn(|ax| b[ax][0] + (i[ax] as f64 + 0.5) * self.voxel_size[ax])
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let [_, ny, nz] = self.dims();
        [idx / (ny * nz), (idx / nz) % ny, idx % nz]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.bounds()
            .iter()
            .zip(p)
            .all(|(b, v)| v >= b[0] && v < b[1])
    }
}

/// Position of a coordinate between bin centers: `(lower, upper, weight)`.
/// `None` outside the center hull.
fn bracket(coord: f64, first_center: f64, step: f64, n: usize) -> Option<(usize, usize, f64)> {
    let f = (coord - first_center) / step;
    if n == 1 {
        return (f == 0.0).then_some((0, 0, 0.0));
    }
    if !(f >= 0.0 && f <= (n - 1) as f64) {
        return None;
    }
    let lo = (f.floor() as usize).min(n - 2);
    Some((lo, lo + 1, f - lo as f64))
}

/// Trilinear interpolation of the polar volume at `p`, or `None` outside
/// the bin-center hull.
pub fn interpolate_polar(volume: &PowerVolume3D, p: PolarCoord) -> Option<f64> {
    let g = volume.grid();
    let (a0, a1, ta) = bracket(p.azimuth, g.azimuth_center(0), g.azimuth_step(), g.n_azimuth)?;
    let (r0, r1, tr) = bracket(p.range, g.range_center(0), g.range_step, g.n_range)?;
    let (e0, e1, te) = bracket(
        p.elevation,
        g.elevation_center(0),
        g.elevation_step(),
        g.n_elevation,
    )?;
    let lerp = |u: f64, v: f64, t: f64| u + (v - u) * t;
    let plane = |a: usize| {
        lerp(
            lerp(volume.get(a, r0, e0), volume.get(a, r0, e1), te),
            lerp(volume.get(a, r1, e0), volume.get(a, r1, e1), te),
            tr,
        )
    };
    Some(lerp(plane(a0), plane(a1), ta))
}

/// Voxelized power with a per-voxel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianVoxelVolume {
    grid: CartesianGridSpec,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl CartesianVoxelVolume {
    pub fn new(grid: CartesianGridSpec, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        if values.len() != n || valid.len() != n {
            return Err(Error::Dimension(format!(
                "voxel arrays have {} values / {} flags, grid expects {n}",
                values.len(),
                valid.len()
            )));
        }
        for (i, (&v, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("voxel {i} has invalid power {v}")));
            }
        }
        Ok(Self { grid, values, valid })
    }

    pub fn grid(&self) -> &CartesianGridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = ByteWriter::new(w);
        w.bytes(VOXEL_MAGIC)?;
        w.u16(VOXEL_VERSION)?;
        for n in self.grid.dims() {
            w.len_u32(n, "voxel count")?;
        }
        for b in self.grid.bounds() {
            w.f64(b[0])?;
            w.f64(b[1])?;
        }
        for s in self.grid.voxel_size {
            w.f64(s)?;
        }
        let vals: Vec<f32> = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
            .collect();
        w.f32s(&vals)?;
        let mask: Vec<u8> = self.valid.iter().map(|&v| v as u8).collect();
        w.bytes(&mask)?;
        w.finish()?;
        Ok(())
    }

    /// Values come back at 32-bit precision.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        r.magic(VOXEL_MAGIC)?;
        r.version(VOXEL_VERSION)?;
        let dims_at = r.offset();
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let mut f = [0f64; 9];
        for v in &mut f {
            *v = r.f64()?;
        }
        let grid = CartesianGridSpec {
            x_bounds: [f[0], f[1]],
            y_bounds: [f[2], f[3]],
            z_bounds: [f[4], f[5]],
            voxel_size: [f[6], f[7], f[8]],
        };
        grid.validate()
            .map_err(|e| Error::format(dims_at, format!("invalid grid header: {e}")))?;
        if grid.dims() != dims {
            return Err(Error::format(
                dims_at,
                format!("counts {dims:?} disagree with bounds ({:?})", grid.dims()),
            ));
        }
        let n = grid.len();
        let values_at = r.offset();
        let values: Vec<f64> = r.f32s(n)?.into_iter().map(|v| v as f64).collect();
        let mut mask = vec![0u8; n];
        let mask_at = r.offset();
        r.exact(&mut mask)?;
        r.expect_eof()?;
        if let Some(p) = mask.iter().position(|&m| m > 1) {
            return Err(Error::format(mask_at + p as u64, "mask byte must be 0 or 1"));
        }
        Self::new(grid, values, mask.into_iter().map(|m| m == 1).collect())
            .map_err(|e| Error::format(values_at, format!("invalid payload: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Resamples every voxel center; parallel over x slices, deterministic.
pub fn resample_to_cartesian(
    volume: &PowerVolume3D,
    grid: &CartesianGridSpec,
) -> Result<CartesianVoxelVolume> {
    grid.validate()?;
    let [nx, ny, nz] = grid.dims();
    let slice = ny * nz;
    let mut values = vec![0f64; nx * slice];
    let mut valid = vec![false; nx * slice];
    values
        .par_chunks_mut(slice)
        .zip(valid.par_chunks_mut(slice))
        .enumerate()
        .for_each(|(ix, (vals, oks))| {
            for iy in 0..ny {
                for iz in 0..nz {
                    let [x, y, z] = grid.center([ix, iy, iz]);
                    let hit = cartesian_to_polar(x, y, z)
                        .ok()
                        .and_then(|p| interpolate_polar(volume, p));
                    if let Some(v) = hit {
                        vals[iy * nz + iz] = v;
                        oks[iy * nz + iz] = true;
                    }
                }
            }
        });
    CartesianVoxelVolume::new(*grid, values, valid)
}

/// Flat voxel indices kept by the voxel-space percentile filter.
pub fn select_cartesian_percentile(
    voxels: &CartesianVoxelVolume,
    r: Percentile,
) -> Result<Vec<usize>> {
    let valid = voxels.valid_values();
    if valid.is_empty() {
        return Err(Error::Domain("no valid voxels to threshold".into()));
    }
    let threshold = nearest_rank(&valid, r)?;
    Ok(voxels
        .values
        .iter()
        .zip(&voxels.valid)
        .enumerate()
        .filter(|(_, (&v, &ok))| ok && v >= threshold)
        .map(|(i, _)| i)
        .collect())
}

pub fn filter_cartesian_percentile(
    voxels: &CartesianVoxelVolume,
    r: Percentile,
) -> Result<PointCloud> {
    let idx = select_cartesian_percentile(voxels, r)?;
    let points = idx
        .into_iter()
        .map(|i| {
            let [x, y, z] = voxels.grid.center(voxels.grid.unravel(i));
            RadarPoint::new(x, y, z, voxels.values[i])
        })
        .collect();
    Ok(PointCloud::new(points, "cartesian-percentile"))
}
