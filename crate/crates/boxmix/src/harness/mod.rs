//! Training loop, run configuration and the evaluation campaigns.

pub mod augment;
pub mod config;
pub mod studies;
pub mod train;

pub use augment::{augment, AugmentParams};
pub use config::{RunConfig, TrainMode};
pub use studies::{
    beta_histogram, detect_all, detect_image, dominant_label, evaluate_split, flattening_study,
    noise_sweep, patch_study,
};
pub use train::{
    detector_spec_for, train, train_in_memory, train_with_callback, EpochStats, RunRecord,
    TrainedModel,
};
