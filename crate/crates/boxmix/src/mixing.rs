//! Mixing of image pairs and of their anchor targets.
//!
//! Images are blended pixel-wise with a Beta-distributed weight. Targets are
//! blended anchor-wise: label distributions interpolate linearly while each
//! regression target is taken whole from the dominant image, since averaging
//! two unrelated offsets has no geometric meaning. The box-stacking baseline,
//! which concatenates both annotations unweighted, is also provided.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::Result;
use crate::image::ImageTensor;
use crate::invalid_arg;
use crate::matching::{AnchorTargets, GroundTruth};

/// A sampled mixing weight together with the concentration it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixWeight {
    pub lambda: f64,
    pub alpha: f64,
}

impl MixWeight {
    /// Fixed weight, used by tests and by the degenerate-mix training hook.
    pub fn pinned(lambda: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&lambda));
        MixWeight { lambda, alpha: f64::NAN }
    }
}

/// Draw `lambda ~ Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<MixWeight> {
    if !(alpha > 0.0) {
        return Err(invalid_arg!("beta concentration must be positive, got {alpha}"));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| invalid_arg!("beta distribution rejected alpha={alpha}: {e}"))?;
    Ok(MixWeight { lambda: beta.sample(rng), alpha })
}

/// Pixel-wise blend `lambda * x + (1 - lambda) * x2`.
pub fn mix_images(x: &ImageTensor, x2: &ImageTensor, lam: MixWeight) -> Result<ImageTensor> {
    if !x.same_shape(x2) {
        return Err(invalid_arg!(
            "cannot mix images of shapes {}x{}x{} and {}x{}x{}",
            x.height, x.width, x.channels, x2.height, x2.width, x2.channels
        ));
    }
    let l = lam.lambda;
    let data = x
        .data
        .iter()
        .zip(&x2.data)
        .map(|(a, b)| l * a + (1.0 - l) * b)
        .collect();
    ImageTensor::new(x.height, x.width, x.channels, data)
}

/// Blend two target fields built over the same anchor tiling.
///
/// Per anchor: the offset comes from the first field when `lambda > 1/2` and
/// from the second otherwise; the label is the convex combination. An anchor
/// may end up with an undefined offset while its label still carries object
/// mass — the loss treats those anchors as classification-only.
pub fn box_mix(t: &AnchorTargets, t2: &AnchorTargets, lam: MixWeight) -> Result<AnchorTargets> {
    if t.len() != t2.len() || t.num_classes != t2.num_classes {
        return Err(invalid_arg!(
            "target fields disagree: {} vs {} anchors",
            t.len(),
            t2.len()
        ));
    }
    let dominant_first = lam.lambda > 0.5;
    let offsets = if dominant_first { t.offsets.clone() } else { t2.offsets.clone() };
    let labels = t
        .labels
        .iter()
        .zip(&t2.labels)
        .map(|(a, b)| a.mix(b, lam.lambda))
        .collect();
    Ok(AnchorTargets { offsets, labels, num_classes: t.num_classes })
}

/// Baseline combination: keep every box of both annotations.
pub fn box_stack(y: &GroundTruth, y2: &GroundTruth) -> GroundTruth {
    let mut boxes = Vec::with_capacity(y.boxes.len() + y2.boxes.len());
    boxes.extend_from_slice(&y.boxes);
    boxes.extend_from_slice(&y2.boxes);
    GroundTruth { boxes }
}
