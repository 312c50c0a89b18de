//! BEV voxelization, ground-truth Gaussian heatmaps and the masked-MSE
//! distillation loss.
//!
//! BEV grids take their x/y extent from a [`CartesianGridSpec`]: columns
//! run along x and rows along y.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cartesian::CartesianGridSpec;
use crate::cube::PointCloud;
use crate::error::{Error, Result};

/// Top-down projection of a Cartesian grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGrid {
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    pub cell_size: [f64; 2],
}

impl BevGrid {
    pub fn width(&self) -> usize {
        (((self.x_bounds[1] - self.x_bounds[0]) / self.cell_size[0]) - 1e-9)
            .ceil()
            .max(1.0) as usize
    }

    pub fn height(&self) -> usize {
        (((self.y_bounds[1] - self.y_bounds[0]) / self.cell_size[1]) - 1e-9)
            .ceil()
            .max(1.0) as usize
    }

    /// `(row, col)` of the cell containing `(x, y)`, if inside.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.x_bounds[0]) / self.cell_size[0]).floor();
        let r = ((y - self.y_bounds[0]) / self.cell_size[1]).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.width() && (r as usize) < self.height())
            .then(|| (r as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_bounds[0] + (col as f64 + 0.5) * self.cell_size[0],
            self.y_bounds[0] + (row as f64 + 0.5) * self.cell_size[1],
        )
    }
}

impl From<&CartesianGridSpec> for BevGrid {
    fn from(g: &CartesianGridSpec) -> Self {
        Self {
            x_bounds: g.x_bounds,
            y_bounds: g.y_bounds,
            cell_size: [g.voxel_size[0], g.voxel_size[1]],
        }
    }
}

/// Channel x height x width feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BEVFeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub grid: Option<BevGrid>,
}

impl BEVFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for shape {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature map values must be finite".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
            grid: None,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
            grid: None,
        }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.values[(c * self.height + row) * self.width + col]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Channels emitted by [`voxelize_bev`].
pub const BEV_MAX_POWER: usize = 0;
pub const BEV_COUNT: usize = 1;
pub const BEV_MEAN_Z: usize = 2;

/// Per-cell max power, point count and mean z. Points outside the grid
/// are ignored.
pub fn voxelize_bev(cloud: &PointCloud, grid: &BevGrid) -> BEVFeatureMap {
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let mut max_power = vec![0f32; plane];
    let mut count = vec![0u32; plane];
    let mut z_sum = vec![0f64; plane];
    for p in &cloud.points {
        if let Some((row, col)) = grid.cell_of(p.x as f64, p.y as f64) {
            let i = row * w + col;
            max_power[i] = if count[i] == 0 { p.power } else { max_power[i].max(p.power) };
            count[i] += 1;
            z_sum[i] += p.z as f64;
        }
    }
    let mut values = Vec::with_capacity(3 * plane);
    values.extend_from_slice(&max_power);
    values.extend(count.iter().map(|&c| c as f32));
    values.extend(
        z_sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 }),
    );
    BEVFeatureMap {
        channels: 3,
        height: h,
        width: w,
        values,
        grid: Some(*grid),
    }
}

/// Ground-truth box in the BEV plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLabel {
    pub center_x: f64,
    pub center_y: f64,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl BoxLabel {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::Domain("box length and width must be > 0".into()));
        }
        Ok(())
    }

    /// Axis-aligned extents `(along x, along y)` of the rotated footprint.
    pub fn footprint(&self) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (
            self.length * c.abs() + self.width * s.abs(),
            self.length * s.abs() + self.width * c.abs(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFile {
    #[serde(default)]
    pub labels: Vec<BoxLabel>,
}

impl LabelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("label file: {e}")))?;
        for l in &f.labels {
            l.validate()?;
        }
        Ok(f)
    }
}

/// Per-cell weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Element-wise maximum with another heatmap of the same shape.
    pub fn max_with(&mut self, other: &Heatmap) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = a.max(*b);
        }
    }

    /// Binary PGM (P5), 8-bit, row 0 at the top.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Gaussian standard deviations in cells, `(along x, along y)`.
pub fn gaussian_sigmas(label: &BoxLabel, grid: &BevGrid) -> (f64, f64) {
    let (ex, ey) = label.footprint();
    (
        (ex / 6.0 / grid.cell_size[0]).max(1.0),
        (ey / 6.0 / grid.cell_size[1]).max(1.0),
    )
}

/// Splats one object: a peak-1 Gaussian centered on the cell containing
/// the box center, evaluated at integer cell offsets and truncated beyond
/// three standard deviations.
fn splat_one(label: &BoxLabel, grid: &BevGrid, out: &mut Heatmap) {
    let Some((r0, c0)) = grid.cell_of(label.center_x, label.center_y) else {
        return;
    };
    let (sx, sy) = gaussian_sigmas(label, grid);
    let (rx, ry) = ((3.0 * sx).ceil() as isize, (3.0 * sy).ceil() as isize);
    let (h, w) = (out.height as isize, out.width as isize);
    for dr in -ry..=ry {
        let row = r0 as isize + dr;
        if row < 0 || row >= h {
            continue;
        }
        for dc in -rx..=rx {
            let col = c0 as isize + dc;
            if col < 0 || col >= w {
                continue;
            }
            let (fx, fy) = (dc as f64 / sx, dr as f64 / sy);
            let g = (-0.5 * (fx * fx + fy * fy)).exp() as f32;
            let cell = &mut out.values[(row * w + col) as usize];
            *cell = cell.max(g);
        }
    }
}

/// Heatmap of all labels, overlapping objects combined by maximum.
pub fn splat_gaussian_heatmap(labels: &[BoxLabel], grid: &BevGrid) -> Result<Heatmap> {
    let mut hm = Heatmap::zeros(grid.height(), grid.width());
    for l in labels {
        l.validate()?;
        splat_one(l, grid, &mut hm);
    }
    Ok(hm)
}

/// Mean over all `C*H*W` elements of `(m*t - m*s)^2`, with the mask
/// broadcast over channels.
pub fn masked_mse(teacher: &BEVFeatureMap, student: &BEVFeatureMap, mask: &Heatmap) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(Error::Dimension(format!(
            "teacher {:?} vs student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    if (mask.height, mask.width) != (teacher.height, teacher.width) {
        return Err(Error::Dimension(format!(
            "mask {}x{} vs features {}x{}",
            mask.height, mask.width, teacher.height, teacher.width
        )));
    }
    let plane = teacher.height * teacher.width;
    if teacher.channels * plane == 0 {
        return Err(Error::Dimension("empty feature maps".into()));
    }
    let mut sum = 0f64;
    for (tc, sc) in teacher
        .values
        .chunks_exact(plane)
        .zip(student.values.chunks_exact(plane))
    {
        for ((&t, &s), &m) in tc.iter().zip(sc).zip(&mask.values) {
            let m = m as f64;
            let d = m * t as f64 - m * s as f64;
            sum += d * d;
        }
    }
    Ok(sum / (teacher.channels * plane) as f64)
}

/// Detection/distillation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

pub fn total_loss(l_detect: f64, l_distill: f64, w: LossWeights) -> f64 {
    w.alpha * l_detect + w.beta * l_distill
}
