//! Translation of labeled boxes into per-anchor training targets.
//!
//! Each anchor receives a label distribution over `C+1` classes (index 0 is
//! background) and a regression target that is defined exactly when the anchor
//! carries an object.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{encode_offsets, iou, AnchorSet, BBox, OffsetVector};
use crate::invalid_arg;

/// Index of the background class inside a label distribution.
pub const BACKGROUND: usize = 0;

/// Default slack when deciding whether a soft label still counts as positive.
pub const POSITIVE_EPS: f64 = 1e-6;

/// One annotated object: a box plus its class in `1..=C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class_id: usize,
}

/// The annotation of one image; possibly empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<LabeledBox>,
}

impl GroundTruth {
    pub fn new(boxes: Vec<LabeledBox>) -> Self {
        Self { boxes }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for b in &self.boxes {
            if b.class_id == BACKGROUND || b.class_id > num_classes {
                return Err(invalid_arg!(
                    "class id {} outside 1..={num_classes}",
                    b.class_id
                ));
            }
        }
        Ok(())
    }
}

/// A probability vector over background plus `C` object classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(invalid_arg!("label distribution needs >= 2 entries"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid_arg!("label distribution entries must be >= 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid_arg!("label distribution sums to {sum}, expected 1"));
        }
        Ok(Self(probs))
    }

    pub fn background(num_classes: usize) -> Self {
        let mut p = vec![0.0; num_classes + 1];
        p[BACKGROUND] = 1.0;
        Self(p)
    }

    pub fn one_hot(class_id: usize, num_classes: usize) -> Self {
        debug_assert!(class_id <= num_classes);
        let mut p = vec![0.0; num_classes + 1];
        p[class_id] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn background_mass(&self) -> f64 {
        self.0[BACKGROUND]
    }

    /// Convex combination `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &LabelDistribution, lambda: f64) -> LabelDistribution {
        debug_assert_eq!(self.0.len(), other.0.len());
        LabelDistribution(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        )
    }
}

/// Per-anchor training targets for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorTargets {
    pub offsets: Vec<OffsetVector>,
    pub labels: Vec<LabelDistribution>,
    pub num_classes: usize,
}

impl AnchorTargets {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Assign every anchor a target from the annotation.
///
/// Rules, in order:
/// 1. an anchor whose best-overlap box exceeds `tau` takes that box (ties on
///    overlap break toward the lower box index);
/// 2. every annotated box additionally claims one anchor outright, chosen
///    greedily over `(box, anchor)` pairs by descending overlap so that a box
///    losing its favorite anchor to a stronger box falls back to its next
///    best free anchor (ties: lower anchor index, then lower box index);
/// 3. all remaining anchors are background with an undefined offset.
pub fn match_targets(
    y: &GroundTruth,
    anchors: &AnchorSet,
    num_classes: usize,
    tau: f64,
) -> Result<AnchorTargets> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid_arg!("matching threshold must lie in (0,1), got {tau}"));
    }
    y.validate(num_classes)?;
    let n = anchors.len();
    let m = y.boxes.len();

    // assignment[a] = Some(gt index)
    let mut assignment: Vec<Option<usize>> = vec![None; n];

    if m > 0 {
        let mut overlap = vec![0.0f64; n * m];
        for (a, anchor) in anchors.boxes().iter().enumerate() {
            for (g, gt) in y.boxes.iter().enumerate() {
                overlap[a * m + g] = iou(anchor, &gt.bbox);
            }
        }

        // Rule 1: threshold assignment to the best-overlap box.
        for a in 0..n {
            let mut best_g = 0;
            let mut best = overlap[a * m];
            for g in 1..m {
                if overlap[a * m + g] > best {
                    best = overlap[a * m + g];
                    best_g = g;
                }
            }
            if best > tau {
                assignment[a] = Some(best_g);
            }
        }

        // Rule 2: greedy forced matches, one anchor per box.
        let mut forced_anchor: Vec<Option<usize>> = vec![None; m];
        let mut anchor_forced = vec![false; n];
        for _ in 0..m.min(n) {
            let mut best: Option<(f64, usize, usize)> = None; // (overlap, anchor, gt)
            for g in 0..m {
                if forced_anchor[g].is_some() {
                    continue;
                }
                for a in 0..n {
                    if anchor_forced[a] {
                        continue;
                    }
                    let o = overlap[a * m + g];
                    let better = match best {
                        None => true,
                        Some((bo, ba, bg)) => {
                            o > bo || (o == bo && (a < ba || (a == ba && g < bg)))
                        }
                    };
                    if better {
                        best = Some((o, a, g));
                    }
                }
            }
            let (_, a, g) = best.expect("an unforced (box, anchor) pair exists");
            forced_anchor[g] = Some(a);
            anchor_forced[a] = true;
            assignment[a] = Some(g);
        }
    }

    let mut offsets = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (a, anchor) in anchors.boxes().iter().enumerate() {
        match assignment[a] {
            Some(g) => {
                let gt = &y.boxes[g];
                offsets.push(encode_offsets(anchor, &gt.bbox));
                labels.push(LabelDistribution::one_hot(gt.class_id, num_classes));
            }
            None => {
                offsets.push(OffsetVector::Undefined);
                labels.push(LabelDistribution::background(num_classes));
            }
        }
    }
    Ok(AnchorTargets { offsets, labels, num_classes })
}

/// Anchors whose label keeps less than `1 - eps` mass on background.
pub fn positives_mask(t: &AnchorTargets, eps: f64) -> Vec<bool> {
    debug_assert!((0.0..1.0).contains(&eps));
    t.labels
        .iter()
        .map(|l| l.background_mass() < 1.0 - eps)
        .collect()
}
