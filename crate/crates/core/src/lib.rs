//! Segmentation quality control: estimated quality metrics from voxel error
//! probabilities, estimated-error extraction, error-region boxes, ranking,
//! a test-time-augmentation baseline, evaluation and synthetic data.

pub mod detection;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod manifest;
pub mod metrics;
pub mod morphology;
pub mod ranking;
pub mod synth;
pub mod tta;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, ProbabilityVolume, ScalarVolume, VolumeGeometry};
