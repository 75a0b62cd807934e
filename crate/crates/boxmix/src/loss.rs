//! Detection training criterion for soft anchor targets.
//!
//! Classification is soft-label cross-entropy against the predicted softmax;
//! regression is smooth-L1 on encoded offsets, active only where the target
//! offset is defined. Background anchors are subsampled by hard negative
//! mining before entering the classification sum. Analytic gradients with
//! respect to logits and offset predictions are provided alongside the values
//! so the detector can backpropagate through the whole criterion.

use crate::error::Result;
use crate::geometry::OffsetVector;
use crate::invalid_arg;
use crate::matching::{positives_mask, AnchorTargets, LabelDistribution, POSITIVE_EPS};

/// Raw detector outputs, one row of class logits and one offset quadruple per
/// anchor, aligned with the anchor flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionField {
    pub num_classes: usize,
    /// `n_anchors * (num_classes + 1)`, anchor-major.
    pub logits: Vec<f64>,
    /// `n_anchors * 4`, anchor-major.
    pub offsets: Vec<f64>,
}

impl PredictionField {
    pub fn zeros(n_anchors: usize, num_classes: usize) -> Self {
        Self {
            num_classes,
            logits: vec![0.0; n_anchors * (num_classes + 1)],
            offsets: vec![0.0; n_anchors * 4],
        }
    }

    pub fn n_anchors(&self) -> usize {
        self.offsets.len() / 4
    }

    pub fn logits_of(&self, anchor: usize) -> &[f64] {
        let w = self.num_classes + 1;
        &self.logits[anchor * w..(anchor + 1) * w]
    }

    pub fn offsets_of(&self, anchor: usize) -> &[f64; 4] {
        self.offsets[anchor * 4..anchor * 4 + 4]
            .try_into()
            .expect("offset rows are 4 wide")
    }
}

/// Value and per-term breakdown of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    pub n_pos: usize,
}

/// Huber-style penalty: quadratic inside the unit interval, linear outside.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`].
#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Component-wise smooth-L1 between a target offset and a prediction; zero
/// when the target is undefined, regardless of the prediction.
pub fn regression_loss(target: &OffsetVector, pred: &[f64; 4]) -> f64 {
    match target.values() {
        None => 0.0,
        Some(t) => t.iter().zip(pred).map(|(t, p)| smooth_l1(t - p)).sum(),
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

/// Cross-entropy of the predicted softmax under a soft target distribution.
/// Linear in the target, so a mixed target splits exactly into the convex
/// combination of the two unmixed cross-entropies.
pub fn classification_loss(target: &LabelDistribution, logits: &[f64]) -> f64 {
    debug_assert_eq!(target.len(), logits.len());
    let ls = log_softmax(logits);
    -target.probs().iter().zip(&ls).map(|(p, l)| p * l).sum::<f64>()
}

/// Select the anchors that enter the classification sum: every positive, plus
/// the `ceil(ratio * n_pos)` negatives with the largest classification loss
/// (ties toward the lower anchor index). With no positives at all, the single
/// worst negative is kept so the loss never degenerates to an empty sum.
pub fn hard_negative_mining(cls_losses: &[f64], positives: &[bool], ratio: f64) -> Vec<bool> {
    debug_assert_eq!(cls_losses.len(), positives.len());
    debug_assert!(ratio > 0.0);
    let n_pos = positives.iter().filter(|p| **p).count();
    let mut keep: Vec<bool> = positives.to_vec();

    let mut negatives: Vec<usize> = (0..positives.len()).filter(|i| !positives[*i]).collect();
    let budget = if n_pos == 0 {
        1.min(negatives.len())
    } else {
        ((ratio * n_pos as f64).ceil() as usize).min(negatives.len())
    };
    // stable sort: equal losses keep ascending index order
    negatives.sort_by(|a, b| cls_losses[*b].partial_cmp(&cls_losses[*a]).expect("finite loss"));
    for &i in negatives.iter().take(budget) {
        keep[i] = true;
    }
    keep
}

/// Full criterion over one image, optionally restricted to a subset of
/// anchors (mining and the positive count are then taken within the subset).
pub fn detection_loss_masked(
    targets: &AnchorTargets,
    preds: &PredictionField,
    ratio: f64,
    anchor_mask: Option<&[bool]>,
) -> Result<LossBreakdown> {
    let (breakdown, _, _) = detection_loss_gradients(targets, preds, ratio, anchor_mask)?;
    Ok(breakdown)
}

/// Criterion over all anchors of one image.
pub fn detection_loss(
    targets: &AnchorTargets,
    preds: &PredictionField,
    ratio: f64,
) -> Result<LossBreakdown> {
    detection_loss_masked(targets, preds, ratio, None)
}

/// Loss plus analytic gradients with respect to the raw logits and offset
/// predictions. Gradient layout matches [`PredictionField`].
pub fn detection_loss_gradients(
    targets: &AnchorTargets,
    preds: &PredictionField,
    ratio: f64,
    anchor_mask: Option<&[bool]>,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let n = targets.len();
    if preds.n_anchors() != n || preds.num_classes != targets.num_classes {
        return Err(invalid_arg!(
            "prediction field ({} anchors) does not align with targets ({} anchors)",
            preds.n_anchors(),
            n
        ));
    }
    if let Some(mask) = anchor_mask {
        if mask.len() != n {
            return Err(invalid_arg!("anchor mask length {} != {}", mask.len(), n));
        }
    }
    if !(ratio > 0.0) {
        return Err(invalid_arg!("mining ratio must be positive, got {ratio}"));
    }
    let in_scope = |i: usize| anchor_mask.map_or(true, |m| m[i]);
    let width = targets.num_classes + 1;

    // positives within scope
    let mut positives = positives_mask(targets, POSITIVE_EPS);
    for i in 0..n {
        if !in_scope(i) {
            positives[i] = false;
        }
    }
    let n_pos = positives.iter().filter(|p| **p).count();
    let denom = n_pos.max(1) as f64;

    // per-anchor classification losses (out-of-scope anchors excluded by
    // giving them -inf rank: simply never considered below)
    let mut cls_losses = vec![0.0f64; n];
    for i in 0..n {
        if in_scope(i) {
            cls_losses[i] = classification_loss(&targets.labels[i], preds.logits_of(i));
        }
    }

    // mining over the in-scope subset
    let scope: Vec<usize> = (0..n).filter(|i| in_scope(*i)).collect();
    let sub_losses: Vec<f64> = scope.iter().map(|i| cls_losses[*i]).collect();
    let sub_pos: Vec<bool> = scope.iter().map(|i| positives[*i]).collect();
    let sub_keep = hard_negative_mining(&sub_losses, &sub_pos, ratio);
    let mut keep = vec![false; n];
    for (j, &i) in scope.iter().enumerate() {
        keep[i] = sub_keep[j];
    }

    let mut cls = 0.0;
    let mut reg = 0.0;
    let mut dlogits = vec![0.0f64; preds.logits.len()];
    let mut doffsets = vec![0.0f64; preds.offsets.len()];

    for i in 0..n {
        if keep[i] {
            cls += cls_losses[i];
            let sm = softmax(preds.logits_of(i));
            let p = targets.labels[i].probs();
            for c in 0..width {
                dlogits[i * width + c] = (sm[c] - p[c]) / denom;
            }
        }
        if in_scope(i) {
            if let Some(t) = targets.offsets[i].values() {
                let pred = preds.offsets_of(i);
                reg += regression_loss(&targets.offsets[i], pred);
                for c in 0..4 {
                    doffsets[i * 4 + c] = -smooth_l1_grad(t[c] - pred[c]) / denom;
                }
            }
        }
    }
    cls /= denom;
    reg /= denom;

    Ok((
        LossBreakdown { cls, reg, total: cls + reg, n_pos },
        dlogits,
        doffsets,
    ))
}
