//! COCO-style summary metrics: AP averaged over overlap thresholds, recall at
//! fixed detection budgets, and size-bucketed variants.
//!
//! Conventions, mirrored verbatim by the reference oracle:
//! - thresholds are 0.50, 0.55, ..., 0.95; AP uses all-point interpolation;
//! - a per-image, per-class budget truncates detections before ranking (used
//!   by the recall metrics; AP runs unbudgeted);
//! - size buckets partition ground truth by box area in normalized units with
//!   cutoffs (32/640)^2 and (96/640)^2. Out-of-bucket boxes are ignored, not
//!   deleted: a detection whose only qualifying overlap is an ignored box is
//!   dropped from the ranking instead of counting as a false positive;
//! - classes with no (in-bucket) ground truth are excluded from every mean.

use serde::{Deserialize, Serialize};

use super::map::{ap_from_matches, ApStyle};
use super::postprocess::Detection;
use crate::geometry::iou;
use crate::matching::GroundTruth;

pub const AREA_SMALL_MAX: f64 = (32.0 / 640.0) * (32.0 / 640.0);
pub const AREA_MEDIUM_MAX: f64 = (96.0 / 640.0) * (96.0 / 640.0);

pub const COCO_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoMetrics {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaBucket {
    All,
    Small,
    Medium,
    Large,
}

impl AreaBucket {
    fn contains(&self, area: f64) -> bool {
        match self {
            AreaBucket::All => true,
            AreaBucket::Small => area < AREA_SMALL_MAX,
            AreaBucket::Medium => (AREA_SMALL_MAX..AREA_MEDIUM_MAX).contains(&area),
            AreaBucket::Large => area >= AREA_MEDIUM_MAX,
        }
    }
}

/// Greedy matching for one `(class, threshold, bucket, budget)` combination.
/// Returns the true-positive flags of the counted (non-ignored) detections in
/// rank order, plus the number of in-bucket ground-truth boxes.
pub fn class_matches(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
    bucket: AreaBucket,
    budget: Option<usize>,
) -> (Vec<bool>, usize) {
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (img, dets) in dets_per_image.iter().enumerate() {
        let mut mine: Vec<usize> = (0..dets.len())
            .filter(|i| dets[*i].class_id == class_id)
            .collect();
        mine.sort_by(|a, b| {
            dets[*b]
                .score
                .partial_cmp(&dets[*a].score)
                .expect("finite scores")
                .then(a.cmp(b))
        });
        if let Some(n) = budget {
            mine.truncate(n);
        }
        ranked.extend(mine.into_iter().map(|i| (img, i)));
    }
    ranked.sort_by(|a, b| {
        let sa = dets_per_image[a.0][a.1].score;
        let sb = dets_per_image[b.0][b.1].score;
        sb.partial_cmp(&sa).expect("finite scores").then(a.cmp(b))
    });

    let ignored: Vec<Vec<bool>> = gts_per_image
        .iter()
        .map(|g| {
            g.boxes
                .iter()
                .map(|b| b.class_id == class_id && !bucket.contains(b.bbox.area()))
                .collect()
        })
        .collect();
    let n_gt: usize = gts_per_image
        .iter()
        .enumerate()
        .map(|(img, g)| {
            g.boxes
                .iter()
                .enumerate()
                .filter(|(i, b)| b.class_id == class_id && !ignored[img][*i])
                .count()
        })
        .sum();

    let mut claimed: Vec<Vec<bool>> = gts_per_image
        .iter()
        .map(|g| vec![false; g.boxes.len()])
        .collect();
    let mut is_tp = Vec::new();
    for (img, i) in ranked {
        let det = &dets_per_image[img][i];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts_per_image[img].boxes.iter().enumerate() {
            if gt.class_id != class_id || ignored[img][gi] || claimed[img][gi] {
                continue;
            }
            let o = iou(&det.bbox, &gt.bbox);
            if o > best.map_or(0.0, |(bo, _)| bo) {
                best = Some((o, gi));
            }
        }
        if let Some((o, gi)) = best {
            if o >= iou_thr {
                claimed[img][gi] = true;
                is_tp.push(true);
                continue;
            }
        }
        // unmatched: possibly absorbed by an ignored box
        let absorbed = gts_per_image[img]
            .boxes
            .iter()
            .enumerate()
            .any(|(gi, gt)| {
                gt.class_id == class_id
                    && ignored[img][gi]
                    && iou(&det.bbox, &gt.bbox) >= iou_thr
            });
        if !absorbed {
            is_tp.push(false);
        }
    }
    (is_tp, n_gt)
}

fn mean_ap(
    dets: &[Vec<Detection>],
    gts: &[GroundTruth],
    num_classes: usize,
    bucket: AreaBucket,
) -> f64 {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class_id in 1..=num_classes {
        let mut class_sum = 0.0;
        let mut n_gt_seen = 0usize;
        for thr in COCO_THRESHOLDS {
            let (is_tp, n_gt) = class_matches(dets, gts, class_id, thr, bucket, None);
            n_gt_seen = n_gt;
            class_sum += ap_from_matches(&is_tp, n_gt, ApStyle::AllPoint);
        }
        if n_gt_seen > 0 {
            sum += class_sum / COCO_THRESHOLDS.len() as f64;
            counted += 1;
        }
    }
    if counted > 0 { sum / counted as f64 } else { 0.0 }
}

fn mean_ap_at(
    dets: &[Vec<Detection>],
    gts: &[GroundTruth],
    num_classes: usize,
    thr: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class_id in 1..=num_classes {
        let (is_tp, n_gt) = class_matches(dets, gts, class_id, thr, AreaBucket::All, None);
        if n_gt > 0 {
            sum += ap_from_matches(&is_tp, n_gt, ApStyle::AllPoint);
            counted += 1;
        }
    }
    if counted > 0 { sum / counted as f64 } else { 0.0 }
}

fn mean_recall(
    dets: &[Vec<Detection>],
    gts: &[GroundTruth],
    num_classes: usize,
    bucket: AreaBucket,
    budget: usize,
) -> f64 {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for class_id in 1..=num_classes {
        let mut class_sum = 0.0;
        let mut n_gt_seen = 0usize;
        for thr in COCO_THRESHOLDS {
            let (is_tp, n_gt) =
                class_matches(dets, gts, class_id, thr, bucket, Some(budget));
            n_gt_seen = n_gt;
            if n_gt > 0 {
                let tp = is_tp.iter().filter(|t| **t).count();
                class_sum += tp as f64 / n_gt as f64;
            }
        }
        if n_gt_seen > 0 {
            sum += class_sum / COCO_THRESHOLDS.len() as f64;
            counted += 1;
        }
    }
    if counted > 0 { sum / counted as f64 } else { 0.0 }
}

/// Full COCO-style metric table.
pub fn coco_ap(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    num_classes: usize,
) -> CocoMetrics {
    debug_assert_eq!(dets_per_image.len(), gts_per_image.len());
    CocoMetrics {
        ap: mean_ap(dets_per_image, gts_per_image, num_classes, AreaBucket::All),
        ap50: mean_ap_at(dets_per_image, gts_per_image, num_classes, 0.50),
        ap75: mean_ap_at(dets_per_image, gts_per_image, num_classes, 0.75),
        ap_small: mean_ap(dets_per_image, gts_per_image, num_classes, AreaBucket::Small),
        ap_medium: mean_ap(dets_per_image, gts_per_image, num_classes, AreaBucket::Medium),
        ap_large: mean_ap(dets_per_image, gts_per_image, num_classes, AreaBucket::Large),
        ar1: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::All, 1),
        ar10: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::All, 10),
        ar100: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::All, 100),
        ar_small: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::Small, 100),
        ar_medium: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::Medium, 100),
        ar_large: mean_recall(dets_per_image, gts_per_image, num_classes, AreaBucket::Large, 100),
    }
}
