//! Polar radar grids, the 4D radar tensor, Doppler collapse and the
//! polar/Cartesian coordinate maps.
//!
//! Storage is row-major over (azimuth, range, elevation, Doppler): the
//! Doppler index varies fastest.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"4DRT";
pub const TENSOR_VERSION: u16 = 1;

/// Physical layout of a polar radar grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGridSpec {
    pub n_azimuth: usize,
    pub n_range: usize,
    pub n_elevation: usize,
    pub n_doppler: usize,
    /// Radians, `[min, max]`.
    pub azimuth_bounds: [f64; 2],
    /// Radians, `[min, max]`.
    pub elevation_bounds: [f64; 2],
    pub range_start: f64,
    pub range_step: f64,
    pub doppler_step: f64,
}

impl Default for PolarGridSpec {
    /// Desk-scale grid: ±53° azimuth, 0.4 m range bins out to 51.2 m,
    /// ±18° elevation, eight Doppler bins.
    fn default() -> Self {
        Self {
            n_azimuth: 64,
            n_range: 128,
            n_elevation: 16,
            n_doppler: 8,
            azimuth_bounds: [-53f64.to_radians(), 53f64.to_radians()],
            elevation_bounds: [-18f64.to_radians(), 18f64.to_radians()],
            range_start: 0.0,
            range_step: 0.4,
            doppler_step: 0.06,
        }
    }
}

/// Continuous polar coordinate of a bin center or a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCoord {
    pub azimuth: f64,
    pub range: f64,
    pub elevation: f64,
}

impl PolarGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_azimuth == 0 || self.n_range == 0 || self.n_elevation == 0 || self.n_doppler == 0
        {
            return Err(Error::Config(format!(
                "grid counts must be >= 1, got {}x{}x{}x{}",
                self.n_azimuth, self.n_range, self.n_elevation, self.n_doppler
            )));
        }
        let finite = [
            self.azimuth_bounds[0],
            self.azimuth_bounds[1],
            self.elevation_bounds[0],
            self.elevation_bounds[1],
            self.range_start,
            self.range_step,
            self.doppler_step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("grid parameters must be finite".into()));
        }
        if self.azimuth_bounds[1] <= self.azimuth_bounds[0] {
            return Err(Error::Config("azimuth_bounds: max must exceed min".into()));
        }
        if self.elevation_bounds[1] <= self.elevation_bounds[0] {
            return Err(Error::Config("elevation_bounds: max must exceed min".into()));
        }
        if self.range_step <= 0.0 {
            return Err(Error::Config("range_step must be > 0".into()));
        }
        if self.range_start < 0.0 {
            return Err(Error::Config("range_start must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of spatial cells (Doppler excluded).
    pub fn spatial_len(&self) -> usize {
        self.n_azimuth * self.n_range * self.n_elevation
    }

    pub fn len(&self) -> usize {
        self.spatial_len() * self.n_doppler
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn azimuth_step(&self) -> f64 {
        (self.azimuth_bounds[1] - self.azimuth_bounds[0]) / self.n_azimuth as f64
    }

    pub fn elevation_step(&self) -> f64 {
        (self.elevation_bounds[1] - self.elevation_bounds[0]) / self.n_elevation as f64
    }

    pub fn azimuth_center(&self, i: usize) -> f64 {
        self.azimuth_bounds[0] + (i as f64 + 0.5) * self.azimuth_step()
    }

    pub fn range_center(&self, i: usize) -> f64 {
        self.range_start + (i as f64 + 0.5) * self.range_step
    }

    pub fn elevation_center(&self, i: usize) -> f64 {
        self.elevation_bounds[0] + (i as f64 + 0.5) * self.elevation_step()
    }

    /// Doppler bins are centered on zero velocity.
    pub fn doppler_center(&self, i: usize) -> f64 {
        (i as f64 - (self.n_doppler as f64 - 1.0) / 2.0) * self.doppler_step
    }

    /// Flat index of a spatial cell in (azimuth, range, elevation) order.
    #[inline]
    pub fn spatial_index(&self, a: usize, r: usize, e: usize) -> usize {
        (a * self.n_range + r) * self.n_elevation + e
    }

    #[inline]
    pub fn unravel_spatial(&self, idx: usize) -> [usize; 3] {
        let e = idx % self.n_elevation;
        let ar = idx / self.n_elevation;
        [ar / self.n_range, ar % self.n_range, e]
    }

    /// Same grid with the Doppler axis collapsed to a single bin.
    pub fn collapsed(&self) -> Self {
        Self {
            n_doppler: 1,
            ..*self
        }
    }
}

/// Bin-center physical coordinates of a discrete (azimuth, range,
/// elevation) index.
pub fn discrete_to_continuous(index: [usize; 3], grid: &PolarGridSpec) -> Result<PolarCoord> {
    let [a, r, e] = index;
    if a >= grid.n_azimuth || r >= grid.n_range || e >= grid.n_elevation {
        return Err(Error::Range(format!(
            "index ({a}, {r}, {e}) outside grid {}x{}x{}",
            grid.n_azimuth, grid.n_range, grid.n_elevation
        )));
    }
    Ok(PolarCoord {
        azimuth: grid.azimuth_center(a),
        range: grid.range_center(r),
        elevation: grid.elevation_center(e),
    })
}

/// `x = r cos(el) cos(az)`, `y = r cos(el) sin(az)`, `z = r sin(el)`.
pub fn polar_to_cartesian(azimuth: f64, range: f64, elevation: f64) -> [f64; 3] {
    let (s_el, c_el) = elevation.sin_cos();
    let (s_az, c_az) = azimuth.sin_cos();
    let ground = range * c_el;
    [ground * c_az, ground * s_az, range * s_el]
}

/// Inverse of [`polar_to_cartesian`]. Azimuth lies in `(-pi, pi]` and
/// elevation in `[-pi/2, pi/2]`; points on the vertical axis get azimuth 0.
pub fn cartesian_to_polar(x: f64, y: f64, z: f64) -> Result<PolarCoord> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::Domain("non-finite cartesian coordinate".into()));
    }
    if x == 0.0 && y == 0.0 && z == 0.0 {
        return Err(Error::Domain("zero vector has no polar direction".into()));
    }
    let ground = x.hypot(y);
    let range = ground.hypot(z);
    let mut azimuth = if ground == 0.0 { 0.0 } else { y.atan2(x) };
    if azimuth <= -PI {
        azimuth = PI;
    }
    let elevation = z.atan2(ground);
    Ok(PolarCoord {
        azimuth,
        range,
        elevation,
    })
}

fn check_power(values: impl Iterator<Item = f64>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!(
                "power at flat index {i} is {v}; must be finite and >= 0"
            )));
        }
    }
    Ok(())
}

/// Dense 4D radar tensor of linear power.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarTensor4D {
    grid: PolarGridSpec,
    values: Vec<f32>,
}

impl RadarTensor4D {
    pub fn new(grid: PolarGridSpec, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "tensor has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        check_power(values.iter().map(|&v| v as f64))?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: PolarGridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(Self {
            values: vec![0.0; grid.len()],
            grid,
        })
    }

    pub fn grid(&self) -> &PolarGridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, a: usize, r: usize, e: usize, d: usize) -> usize {
        self.grid.spatial_index(a, r, e) * self.grid.n_doppler + d
    }

    pub fn get(&self, a: usize, r: usize, e: usize, d: usize) -> f32 {
        self.values[self.index(a, r, e, d)]
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = ByteWriter::new(w);
        w.bytes(TENSOR_MAGIC)?;
        w.u16(TENSOR_VERSION)?;
        let g = &self.grid;
        for n in [g.n_azimuth, g.n_range, g.n_elevation, g.n_doppler] {
            w.len_u32(n, "grid count")?;
        }
        for v in [
            g.azimuth_bounds[0],
            g.azimuth_bounds[1],
            g.elevation_bounds[0],
            g.elevation_bounds[1],
            g.range_start,
            g.range_step,
            g.doppler_step,
        ] {
            w.f64(v)?;
        }
        w.f32s(&self.values)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        r.magic(TENSOR_MAGIC)?;
        r.version(TENSOR_VERSION)?;
        let counts_at = r.offset();
        let mut counts = [0usize; 4];
        for c in &mut counts {
            *c = r.u32()? as usize;
        }
        let mut f = [0f64; 7];
        for v in &mut f {
            *v = r.f64()?;
        }
        let grid = PolarGridSpec {
            n_azimuth: counts[0],
            n_range: counts[1],
            n_elevation: counts[2],
            n_doppler: counts[3],
            azimuth_bounds: [f[0], f[1]],
            elevation_bounds: [f[2], f[3]],
            range_start: f[4],
            range_step: f[5],
            doppler_step: f[6],
        };
        grid.validate()
            .map_err(|e| Error::format(counts_at, format!("invalid grid header: {e}")))?;
        let n = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| Error::format(counts_at, "grid size overflows"))?;
        let values_at = r.offset();
        let values = r.f32s(n)?;
        r.expect_eof()?;
        RadarTensor4D::new(grid, values)
            .map_err(|e| Error::format(values_at, format!("invalid payload: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(46 + 4 * self.values.len());
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Doppler-collapsed power over (azimuth, range, elevation).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVolume3D {
    grid: PolarGridSpec,
    values: Vec<f64>,
}

impl PowerVolume3D {
    pub fn new(grid: PolarGridSpec, values: Vec<f64>) -> Result<Self> {
        let grid = grid.collapsed();
        grid.validate()?;
        if values.len() != grid.spatial_len() {
            return Err(Error::Dimension(format!(
                "volume has {} values, grid expects {}",
                values.len(),
                grid.spatial_len()
            )));
        }
        check_power(values.iter().copied())?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &PolarGridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, a: usize, r: usize, e: usize) -> f64 {
        self.values[self.grid.spatial_index(a, r, e)]
    }

    /// Multiplies every cell by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("scale {c} must be finite and > 0")));
        }
        Self::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    /// Cartesian point at the bin center of spatial flat index `idx`.
    pub fn point_at(&self, idx: usize) -> RadarPoint {
        let [a, r, e] = self.grid.unravel_spatial(idx);
        let [x, y, z] = polar_to_cartesian(
            self.grid.azimuth_center(a),
            self.grid.range_center(r),
            self.grid.elevation_center(e),
        );
        RadarPoint::new(x, y, z, self.values[idx])
    }

    /// Point cloud of the given cells, in the order given.
    pub fn cloud_from_indices(&self, indices: &[usize], frame_id: &str) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.point_at(i)).collect(),
            frame_id: frame_id.to_string(),
        }
    }
}

/// Arithmetic mean over the Doppler axis, in linear power.
pub fn power_map(tensor: &RadarTensor4D) -> PowerVolume3D {
    let nd = tensor.grid.n_doppler;
    let values = tensor
        .values
        .chunks_exact(nd)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / nd as f64)
        .collect();
    PowerVolume3D {
        grid: tensor.grid.collapsed(),
        values,
    }
}

/// A detection `[x, y, z, power]` in meters and linear power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub power: f32,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, power: f64) -> Self {
        Self {
            x: x as f32,
            y: y as f32,
            z: z as f32,
            power: power as f32,
        }
    }
}

/// Ordered list of detections. Pipelines emit points in row-major scan
/// order of their source grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<RadarPoint>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<RadarPoint>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> PolarGridSpec {
        PolarGridSpec {
            n_azimuth: 3,
            n_range: 4,
            n_elevation: 2,
            n_doppler: 2,
            azimuth_bounds: [-PI / 3.0, PI / 3.0],
            elevation_bounds: [-0.2, 0.2],
            range_start: 0.0,
            range_step: 0.4,
            doppler_step: 0.1,
        }
    }

    #[test]
    fn power_map_zero_and_constant() {
        let g = small_grid();
        let t = RadarTensor4D::zeros(g).unwrap();
        assert!(power_map(&t).values().iter().all(|&v| v == 0.0));

        let t = RadarTensor4D::new(g, vec![2.5; g.len()]).unwrap();
        assert!(power_map(&t).values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn power_map_mean_of_two_doppler_bins() {
        let g = small_grid();
        let mut v = vec![0.0; g.len()];
        let t = RadarTensor4D::zeros(g).unwrap();
        v[t.index(1, 2, 1, 0)] = 1.0;
        v[t.index(1, 2, 1, 1)] = 3.0;
        let p = power_map(&RadarTensor4D::new(g, v).unwrap());
        assert_eq!(p.get(1, 2, 1), 2.0);
        assert_eq!(p.values().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn polar_axis_cases() {
        let [x, y, z] = polar_to_cartesian(0.0, 10.0, 0.0);
        assert_eq!([x, y, z], [10.0, 0.0, 0.0]);
        let [x, y, z] = polar_to_cartesian(PI / 2.0, 5.0, 0.0);
        assert!(x.abs() < 1e-15 && (y - 5.0).abs() < 1e-15 && z == 0.0);
        let [x, y, z] = polar_to_cartesian(PI / 4.0, 1.0, PI / 6.0);
        let c = (PI / 6.0).cos();
        assert!((x - c * (PI / 4.0).cos()).abs() < 1e-15);
        assert!((y - c * (PI / 4.0).sin()).abs() < 1e-15);
        assert!((z - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cartesian_to_polar_cases() {
        let p = cartesian_to_polar(10.0, 0.0, 0.0).unwrap();
        assert_eq!((p.azimuth, p.range, p.elevation), (0.0, 10.0, 0.0));
        let p = cartesian_to_polar(0.0, 0.0, 2.0).unwrap();
        assert_eq!((p.azimuth, p.range, p.elevation), (0.0, 2.0, PI / 2.0));
        let p = cartesian_to_polar(-1.0, -0.0, 0.0).unwrap();
        assert_eq!(p.azimuth, PI);
        assert!(matches!(
            cartesian_to_polar(0.0, 0.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bin_centers() {
        let g = small_grid();
        let c = discrete_to_continuous([0, 0, 0], &g).unwrap();
        assert!((c.range - 0.2).abs() < 1e-15);
        let g2 = PolarGridSpec {
            n_azimuth: 2,
            ..g
        };
        let c = discrete_to_continuous([0, 0, 0], &g2).unwrap();
        assert!((c.azimuth + PI / 6.0).abs() < 1e-15);
        assert!(matches!(
            discrete_to_continuous([0, 4, 0], &g),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn bin_centers_strictly_increasing() {
        let g = small_grid();
        for a in 0..g.n_azimuth {
            for r in 0..g.n_range {
                for e in 0..g.n_elevation {
                    let c = discrete_to_continuous([a, r, e], &g).unwrap();
                    if a + 1 < g.n_azimuth {
                        assert!(discrete_to_continuous([a + 1, r, e], &g).unwrap().azimuth > c.azimuth);
                    }
                    if r + 1 < g.n_range {
                        assert!(discrete_to_continuous([a, r + 1, e], &g).unwrap().range > c.range);
                    }
                    if e + 1 < g.n_elevation {
                        assert!(
                            discrete_to_continuous([a, r, e + 1], &g).unwrap().elevation
                                > c.elevation
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_tensors() {
        let g = small_grid();
        assert!(matches!(
            RadarTensor4D::new(g, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        let mut v = vec![0.0; g.len()];
        v[5] = -1.0;
        assert!(matches!(RadarTensor4D::new(g, v), Err(Error::Domain(_))));
        let bad = PolarGridSpec {
            range_step: 0.0,
            ..g
        };
        assert!(matches!(RadarTensor4D::zeros(bad), Err(Error::Config(_))));
    }

    #[test]
    fn tensor_file_round_trip_and_errors() {
        let g = small_grid();
        let v: Vec<f32> = (0..g.len()).map(|i| i as f32 * 0.37).collect();
        let t = RadarTensor4D::new(g, v).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 4 + 2 + 16 + 56 + 4 * g.len());
        assert_eq!(RadarTensor4D::read_from(&bytes[..]).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            RadarTensor4D::read_from(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        let err = RadarTensor4D::read_from(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
