//! Multi-scale-head 3D residual regression for volumetric morphometry.

pub mod cli;
pub mod measure;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod tensor;
pub mod train;
