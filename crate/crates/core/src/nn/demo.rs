//! End-to-end distillation demo: BEV maps of teacher and student clouds are
//! lifted to backbone width by a seeded 1x1 conv, pushed through aggregate
//! and densify, and compared with the heatmap-masked MSE.

use std::time::{Duration, Instant};

use super::blocks::{
    aggregate, densify_forward, AggregateParams, DensifyConfig, DensifyParams, NUM_TEACHERS,
    TEACHER_CHANNELS,
};
use super::ops::{conv2d, Conv2d};
use super::params::{child_seed, ParamInit};
use super::tensor::TensorCHW;
use crate::bev::{masked_mse, splat_gaussian_heatmap, voxelize_bev, BEVFeatureMap, BevGrid, BoxLabel};
use crate::cube::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FusionDemo {
    pub lift: Vec<Conv2d>,
    pub aggregate: AggregateParams,
    pub densify: DensifyParams,
}

#[derive(Debug, Clone)]
pub struct FusionReport {
    pub teacher_shape: [usize; 3],
    pub student_shape: [usize; 3],
    pub loss: f64,
    pub aggregate_time: Duration,
    pub densify_time: Duration,
}

impl FusionDemo {
    /// Seeded parameters; the fused teacher width equals the densify
    /// output width so the two features are loss-compatible.
    pub fn seeded(fused_channels: usize, seed: u64) -> Result<Self> {
        let lift = (0..=NUM_TEACHERS as u64)
            .map(|i| ParamInit::new(child_seed(seed, 200 + i)).conv(3, TEACHER_CHANNELS, 1, 1, 0))
            .collect();
        Ok(Self {
            lift,
            aggregate: AggregateParams::seeded(fused_channels, child_seed(seed, 1))?,
            densify: DensifyParams::seeded(
                DensifyConfig {
                    out_channels: fused_channels,
                    ..DensifyConfig::default()
                },
                child_seed(seed, 2),
            )?,
        })
    }

    /// BEV map with power and count channels log-compressed, lifted to
    /// backbone width.
    fn lift(&self, role: usize, cloud: &PointCloud, grid: &BevGrid) -> Result<TensorCHW> {
        let bev = voxelize_bev(cloud, grid);
        let plane = bev.height * bev.width;
        let mut v = bev.values;
        for x in &mut v[..2 * plane] {
            *x = x.max(0.0).ln_1p();
        }
        let t = TensorCHW::new(3, bev.height, bev.width, v)?;
        conv2d(&t, &self.lift[role])
    }

    pub fn run(
        &self,
        teachers: &[PointCloud],
        student: &PointCloud,
        labels: &[BoxLabel],
        grid: &BevGrid,
    ) -> Result<FusionReport> {
        if teachers.len() != NUM_TEACHERS {
            return Err(Error::Config(format!(
                "fusion demo needs {NUM_TEACHERS} teacher clouds, got {}",
                teachers.len()
            )));
        }
        let lifted = teachers
            .iter()
            .enumerate()
            .map(|(i, c)| self.lift(i, c, grid))
            .collect::<Result<Vec<_>>>()?;
        let sparse = self.lift(NUM_TEACHERS, student, grid)?;

        let t0 = Instant::now();
        let fused = aggregate(&lifted, &self.aggregate)?;
        let aggregate_time = t0.elapsed();
        let t1 = Instant::now();
        let dense = densify_forward(&sparse, &self.densify)?;
        let densify_time = t1.elapsed();

        let mask = splat_gaussian_heatmap(labels, grid)?;
        let to_map = |t: &TensorCHW| {
            BEVFeatureMap::new(t.channels(), t.height(), t.width(), t.data().to_vec())
        };
        let loss = masked_mse(&to_map(&fused)?, &to_map(&dense)?, &mask)?;
        Ok(FusionReport {
            teacher_shape: fused.shape(),
            student_shape: dense.shape(),
            loss,
            aggregate_time,
            densify_time,
        })
    }
}

/// BEV grid over the x/y extent split into `height x width` cells.
pub fn bev_grid_with_shape(
    x_bounds: [f64; 2],
    y_bounds: [f64; 2],
    height: usize,
    width: usize,
) -> BevGrid {
    BevGrid {
        x_bounds,
        y_bounds,
        cell_size: [
            (x_bounds[1] - x_bounds[0]) / width as f64,
            (y_bounds[1] - y_bounds[0]) / height as f64,
        ],
    }
}
