//! Average precision over score-ranked detections.
//!
//! Shared matching convention (also transcribed literally by the reference
//! oracle): per class, detections are ordered by descending score with ties
//! broken by image index then per-image position; each detection greedily
//! claims the unclaimed same-class ground-truth box of largest overlap in its
//! image, and counts as a true positive when that overlap reaches the
//! threshold. A box can be claimed once. Classes without any ground truth are
//! left out of the mean.

use serde::{Deserialize, Serialize};

use super::postprocess::Detection;
use crate::geometry::iou;
use crate::matching::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApStyle {
    /// Mean of interpolated precision at recalls 0.0, 0.1, ..., 1.0.
    ElevenPoint,
    /// Area under the interpolated precision envelope.
    AllPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocMapResult {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

/// Cumulative true/false positive counts for one class in the shared order.
fn ranked_matches(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
) -> (Vec<bool>, usize) {
    let n_gt: usize = gts_per_image
        .iter()
        .map(|g| g.boxes.iter().filter(|b| b.class_id == class_id).count())
        .sum();
    let mut ranked: Vec<(usize, usize)> = Vec::new(); // (image, det index)
    for (img, dets) in dets_per_image.iter().enumerate() {
        for (i, d) in dets.iter().enumerate() {
            if d.class_id == class_id {
                ranked.push((img, i));
            }
        }
    }
    ranked.sort_by(|a, b| {
        let sa = dets_per_image[a.0][a.1].score;
        let sb = dets_per_image[b.0][b.1].score;
        sb.partial_cmp(&sa).expect("finite scores").then(a.cmp(b))
    });

    let mut claimed: Vec<Vec<bool>> = gts_per_image
        .iter()
        .map(|g| vec![false; g.boxes.len()])
        .collect();
    let mut is_tp = Vec::with_capacity(ranked.len());
    for (img, i) in ranked {
        let det = &dets_per_image[img][i];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts_per_image[img].boxes.iter().enumerate() {
            if gt.class_id != class_id || claimed[img][gi] {
                continue;
            }
            let o = iou(&det.bbox, &gt.bbox);
            if o > best.map_or(0.0, |(bo, _)| bo) {
                best = Some((o, gi));
            }
        }
        match best {
            Some((o, gi)) if o >= iou_thr => {
                claimed[img][gi] = true;
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }
    (is_tp, n_gt)
}

/// Average precision of one class from its true/false-positive sequence.
pub fn ap_from_matches(is_tp: &[bool], n_gt: usize, style: ApStyle) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (k, hit) in is_tp.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // interpolated envelope: best precision at this recall or beyond
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match style {
        ApStyle::ElevenPoint => {
            let mut total = 0.0;
            for i in 0..=10 {
                let r = i as f64 / 10.0;
                let p = recall
                    .iter()
                    .position(|rec| *rec >= r - 1e-12)
                    .map_or(0.0, |idx| envelope[idx]);
                total += p;
            }
            total / 11.0
        }
        ApStyle::AllPoint => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for i in 0..recall.len() {
                if recall[i] > prev {
                    ap += (recall[i] - prev) * envelope[i];
                    prev = recall[i];
                }
            }
            ap
        }
    }
}

/// Per-class average precision and the unweighted mean over classes that have
/// at least one ground-truth box.
pub fn voc_map(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    num_classes: usize,
    iou_thr: f64,
    style: ApStyle,
) -> VocMapResult {
    debug_assert_eq!(dets_per_image.len(), gts_per_image.len());
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class_id in 1..=num_classes {
        let (is_tp, n_gt) = ranked_matches(dets_per_image, gts_per_image, class_id, iou_thr);
        let ap = ap_from_matches(&is_tp, n_gt, style);
        if n_gt > 0 {
            sum += ap;
            counted += 1;
        }
        per_class.push(ClassAp { class_id, ap, n_gt });
    }
    let map = if counted > 0 { sum / counted as f64 } else { 0.0 };
    VocMapResult { per_class, map }
}
