//! Data machinery for object detection on RAW images.
//!
//! * [`unprocess`] turns sRGB images into noisy synthetic 16-bit Bayer data.
//! * [`isp`] develops Bayer data back into 3-channel images.
//! * [`datapipe`] splits, rescales and slices condition-tagged datasets.
//! * [`metrics`] computes COCO-style AP with condition-specific slices.
//! * [`stats`] summarises datasets.
//! * [`distill`] holds the distillation losses and their gradients.
//!
//! All randomness goes through [`rng`], so every output is a pure function of
//! its inputs and seed.

pub mod datapipe;
pub mod distill;
pub mod error;
pub mod io;
pub mod isp;
pub mod metrics;
pub mod rng;
pub mod stats;
pub mod types;
pub mod unprocess;

pub use error::{Error, Result};
pub use types::{
    condition_count_table, Annotation, BBox, BayerImage, CameraProfile, Category, Cfa,
    ConditionTag, DatasetIndex, DetectionResult, ImageRecord, Light, LinearImage, MetricsReport,
    NoiseParams, Place, SrgbImage, TileProvenance, Weather,
};
