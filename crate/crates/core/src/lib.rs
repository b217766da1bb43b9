//! Class-conditional image distortions and per-class IoU robustness sweeps
//! for land-cover segmentation models.
//!
//! The distortions touch only the pixels of one semantic class at a time:
//! gray-scale mixing, pixel swapping, single-channel color duplication, and
//! context masking (everything *but* the class is replaced by a fill color).
//! A [`sweep`] runs them over a dataset split at a grid of intensities,
//! queries a [`predictors::Predictor`], and records how the IoU of the
//! distorted class degrades.

pub mod dataset;
pub mod distortions;
pub mod error;
pub mod metrics;
pub mod predictors;
pub mod raster;
pub mod report;
pub mod rng;
pub mod sweep;

pub use dataset::{ChannelStats, DatasetManifest, ManifestEntry, Sample, Split};
pub use distortions::{apply, rgb_to_gray, Channel, Distortion, DistortionSpec};
pub use error::{Error, Result};
pub use metrics::ConfusionMatrix;
pub use predictors::{Predictor, PredictorSpec};
pub use raster::{ImageBuffer, LabelMap, Rgb};
pub use rng::RngStream;
pub use sweep::{
    run_sweep, SweepConfig, SweepOptions, SweepRecord, SweepReport, TransformConfig, TransformKind,
};
