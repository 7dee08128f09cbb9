//! Whole-slide cribriform detection: synthetic cohorts, tiling, registration,
//! a small attention MIL model, training, inference and evaluation.

pub mod error;
#[macro_use]
pub mod seeds;
pub mod augment;
pub mod eval;
pub mod fft;
pub mod infer;
pub mod manifest;
pub mod nn;
pub mod patch_store;
pub mod platt;
pub mod raster;
pub mod registration;
pub mod synth;
pub mod tiling;
pub mod train;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, FoldAssignment, Role, ScanRecord, SlideRecord};
pub use eval::MetricEstimate;
pub use infer::SlidePrediction;
pub use nn::ModelParams;
pub use platt::CalibrationParams;
pub use registration::ShiftEstimate;
pub use tiling::{PatchRecord, PipelineConfig};
pub use train::{FoldCheckpoint, TrainRunConfig};
