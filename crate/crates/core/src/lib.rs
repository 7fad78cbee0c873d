//! Heart- and respiratory-rate estimation from fingertip video.
//!
//! Clips go through [`preprocess`], are split with [`folds`], and train the
//! 3D CNN regressors in [`dvrnet`] via [`trainer`]. [`eemdpca`] is the
//! signal-processing baseline, [`evaluation`] scores both, and [`pipeline`]
//! runs everything from one config file. [`synthgen`] produces labelled
//! synthetic clips for testing.

pub mod augment;
pub mod clipstore;
pub mod dvrnet;
pub mod eemdpca;
pub mod error;
pub mod evaluation;
pub mod folds;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod spectrum;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DvrModelF32 = dvrnet::DvrModel<f32>;
pub type DvrModelF64 = dvrnet::DvrModel<f64>;
pub type CheckpointF32 = dvrnet::Checkpoint<f32>;
pub type CheckpointF64 = dvrnet::Checkpoint<f64>;
pub type ImfSetF32 = eemdpca::ImfSet<f32>;
pub type ImfSetF64 = eemdpca::ImfSet<f64>;
pub type GradientsF32 = dvrnet::Gradients<f32>;
pub type GradientsF64 = dvrnet::Gradients<f64>;
