//! Mixup-style training for anchor-based object detectors.
//!
//! The library turns per-image box annotations into per-anchor targets,
//! blends pairs of images together with their targets, and trains a small
//! convolutional detector against the blended supervision. Around that core
//! sit a deterministic synthetic dataset, an evaluation suite (suppression,
//! average precision, patch and variance-concentration studies), and a CLI
//! (`boxmix`) tying everything into reproducible runs.
//!
//! Module map:
//! - [`geometry`]: boxes, overlap, anchor tilings, offset encoding
//! - [`matching`]: annotation -> per-anchor targets
//! - [`mixing`]: mixing weights, image blending, target blending
//! - [`loss`]: soft-label criterion with hard negative mining and gradients
//! - [`detector`]: the hand-differentiated convolutional model
//! - [`data`]: synthetic scenes, manifests, corruptions
//! - [`eval`]: post-processing and metrics
//! - [`harness`]: training loop and studies
//! - [`oracle`]: independent reference implementations for self-checks

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod loss;
pub mod matching;
pub mod mixing;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
