//! Robust nonlinear ICA by contrastive learning under the gamma-cross entropy.
//!
//! The crate covers synthetic contaminated data generation, whitening, the
//! TCL/RTCL and PCL/RPCL training pipelines, FastICA postprocessing,
//! evaluation metrics, numerical verification of the population-level
//! robustness results, and an HSIC-based causal direction pipeline.

pub mod causal;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod numerics;
pub mod oracle;
pub mod parallel;
pub mod postprocess;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
