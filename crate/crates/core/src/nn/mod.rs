//! Inference-only forward passes for the teacher aggregation and student
//! densify modules, built on small self-contained tensor primitives.

pub mod blocks;
pub mod demo;
pub mod ops;
pub mod params;
pub mod tensor;

pub use blocks::{
    aggregate, alignment_block_forward, cbam_forward, cbam_gates, densify_forward,
    AggregateParams, AlignmentParams, AlignmentWidths, CbamParams, DensifyConfig, DensifyParams,
};
pub use params::{load_params, save_params, NamedTensor, NamedTensors, ParamInit};
pub use tensor::TensorCHW;
