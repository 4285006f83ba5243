//! Shared domain types and utilities for the diffdet workspace.
//!
//! Everything downstream (backbone, fusion, detector, augmentation, benchmark)
//! builds on the value types defined here: float images in `[0,1]`, box sets,
//! detection records, the experiment configuration schema, and labeled
//! deterministic random streams.

pub mod boxes;
pub mod config;
pub mod error;
pub mod hash;
pub mod image;
pub mod rng;

pub use boxes::{BoxSet, Detections};
pub use config::{load_config, save_config, ExperimentConfig};
pub use error::CoreError;
pub use image::ImageTensor;
pub use rng::{seeded_rng, SeedStream};
