//! Point-cloud extraction from 4D radar tensors (polar percentile,
//! Cartesian percentile, CA-CFAR and two-level CFAR) plus the feature math
//! used to distill several teacher representations into a sparse student:
//! BEV heatmap masks, masked MSE and the aggregation/densify forward passes.

pub mod bev;
pub mod cartesian;
pub mod cfar;
pub mod cloud_io;
mod container;
pub mod cube;
pub mod error;
pub mod nn;
pub mod percentile;
pub mod scene;

pub use bev::{
    masked_mse, splat_gaussian_heatmap, total_loss, voxelize_bev, BEVFeatureMap, BevGrid,
    BoxLabel, Heatmap, LossWeights,
};
pub use cartesian::{
    filter_cartesian_percentile, resample_to_cartesian, CartesianGridSpec, CartesianVoxelVolume,
};
pub use cfar::{ca_cfar, two_level_preproc, CfarConfig, TlpConfig};
pub use cloud_io::{read_cloud, size_stats, write_cloud, CloudStats};
pub use container::write_atomic;
pub use cube::{
    cartesian_to_polar, discrete_to_continuous, polar_to_cartesian, power_map, PointCloud,
    PolarCoord, PolarGridSpec, PowerVolume3D, RadarPoint, RadarTensor4D,
};
pub use error::{Error, Result};
pub use percentile::{filter_polar_percentile, percentile_threshold, Percentile};
pub use scene::{generate_4drt, SceneConfig, SceneFile, Scatterer};
