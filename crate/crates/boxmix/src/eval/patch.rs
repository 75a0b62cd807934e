//! Metrics focused on transplanted patches: how often the pasted object is
//! found, how cleanly, and what happens to overall accuracy on altered images.

use serde::{Deserialize, Serialize};

use super::map::{voc_map, ApStyle};
use super::postprocess::Detection;
use crate::geometry::iou;
use crate::matching::{GroundTruth, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchMetrics {
    pub n_patches: usize,
    pub patches_detected: usize,
    pub true_positives: usize,
    pub candidates: usize,
    /// Share of patch-attributed detections that actually hit their patch.
    /// 0 with `precision_defined = false` when nothing was attributed.
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    /// Accuracy over patches and original objects together.
    pub map_all: f64,
}

/// Evaluate one patched copy of a split.
///
/// A detection is attributed to a patch when its best-overlap target — over
/// patches first, then original objects — is that patch and the classes
/// agree. Attributed detections hitting an unclaimed patch at `iou_thr` or
/// better count as true positives (greedily, best score first); the rest are
/// false positives, including duplicates.
pub fn patch_metrics(
    dets_per_image: &[Vec<Detection>],
    patch_gt_per_image: &[Vec<LabeledBox>],
    other_gt_per_image: &[GroundTruth],
    num_classes: usize,
    iou_thr: f64,
    style: ApStyle,
) -> PatchMetrics {
    debug_assert_eq!(dets_per_image.len(), patch_gt_per_image.len());
    debug_assert_eq!(dets_per_image.len(), other_gt_per_image.len());

    let n_patches: usize = patch_gt_per_image.iter().map(|p| p.len()).sum();
    let mut candidates = 0usize;
    let mut true_positives = 0usize;
    let mut patches_detected = 0usize;

    for (img, dets) in dets_per_image.iter().enumerate() {
        let patches = &patch_gt_per_image[img];
        let others = &other_gt_per_image[img].boxes;
        let mut claimed = vec![false; patches.len()];

        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|a, b| {
            dets[*b]
                .score
                .partial_cmp(&dets[*a].score)
                .expect("finite scores")
                .then(a.cmp(b))
        });
        for i in order {
            let det = &dets[i];
            // best target across patches (first) and original objects
            let mut best: Option<(f64, Option<usize>)> = None; // (iou, patch index)
            for (pi, p) in patches.iter().enumerate() {
                let o = iou(&det.bbox, &p.bbox);
                if o > best.map_or(0.0, |(bo, _)| bo) {
                    best = Some((o, Some(pi)));
                }
            }
            for o_box in others {
                let o = iou(&det.bbox, &o_box.bbox);
                if o > best.map_or(0.0, |(bo, _)| bo) {
                    best = Some((o, None));
                }
            }
            if let Some((o, Some(pi))) = best {
                if det.class_id == patches[pi].class_id {
                    candidates += 1;
                    if o >= iou_thr && !claimed[pi] {
                        claimed[pi] = true;
                        true_positives += 1;
                    }
                }
            }
        }
        patches_detected += claimed.iter().filter(|c| **c).count();
    }

    let merged: Vec<GroundTruth> = patch_gt_per_image
        .iter()
        .zip(other_gt_per_image)
        .map(|(p, o)| {
            let mut boxes = p.clone();
            boxes.extend_from_slice(&o.boxes);
            GroundTruth::new(boxes)
        })
        .collect();
    let map_all = voc_map(dets_per_image, &merged, num_classes, iou_thr, style).map;

    let precision_defined = candidates > 0;
    PatchMetrics {
        n_patches,
        patches_detected,
        true_positives,
        candidates,
        precision: if precision_defined {
            true_positives as f64 / candidates as f64
        } else {
            0.0
        },
        recall: if n_patches > 0 {
            patches_detected as f64 / n_patches as f64
        } else {
            0.0
        },
        precision_defined,
        map_all,
    }
}

/// Average of per-copy metrics, used by the repeated-transplant study.
pub fn average_patch_metrics(copies: &[PatchMetrics]) -> PatchMetrics {
    assert!(!copies.is_empty());
    let n = copies.len() as f64;
    PatchMetrics {
        n_patches: copies.iter().map(|c| c.n_patches).sum(),
        patches_detected: copies.iter().map(|c| c.patches_detected).sum(),
        true_positives: copies.iter().map(|c| c.true_positives).sum(),
        candidates: copies.iter().map(|c| c.candidates).sum(),
        precision: copies.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: copies.iter().map(|c| c.recall).sum::<f64>() / n,
        precision_defined: copies.iter().any(|c| c.precision_defined),
        map_all: copies.iter().map(|c| c.map_all).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(cx: f64, cy: f64, s: f64, class_id: usize, score: f64) -> Detection {
        Detection { bbox: BBox::new(cx, cy, s, s).unwrap(), class_id, score }
    }

    fn lb(cx: f64, cy: f64, s: f64, class_id: usize) -> LabeledBox {
        LabeledBox { bbox: BBox::new(cx, cy, s, s).unwrap(), class_id }
    }

    #[test]
    fn no_detections_flags_precision() {
        let m = patch_metrics(
            &[vec![]],
            &[vec![lb(0.5, 0.5, 0.2, 1)]],
            &[GroundTruth::default()],
            3,
            0.5,
            ApStyle::ElevenPoint,
        );
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert!(!m.precision_defined);
    }

    #[test]
    fn clean_hits_are_perfect() {
        let m = patch_metrics(
            &[vec![det(0.5, 0.5, 0.2, 1, 0.9), det(0.2, 0.2, 0.1, 2, 0.8)]],
            &[vec![lb(0.5, 0.5, 0.2, 1)]],
            &[GroundTruth::new(vec![lb(0.2, 0.2, 0.1, 2)])],
            3,
            0.5,
            ApStyle::ElevenPoint,
        );
        assert_eq!(m.patches_detected, 1);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.map_all, 1.0);
    }

    #[test]
    fn hand_enumerated_mixed_fixture() {
        // image 0: patch class 1 found twice (1 TP + 1 duplicate FP);
        // image 1: patch class 2 missed (detection IoU below threshold, still
        //          attributed to the patch -> candidate FP);
        // image 2: detection sits on an original object, not the patch.
        let dets = vec![
            vec![det(0.5, 0.5, 0.2, 1, 0.9), det(0.5, 0.5, 0.21, 1, 0.7)],
            vec![det(0.32, 0.3, 0.1, 2, 0.8)],
            vec![det(0.7, 0.7, 0.2, 1, 0.6)],
        ];
        let patches = vec![
            vec![lb(0.5, 0.5, 0.2, 1)],
            vec![lb(0.3, 0.3, 0.18, 2)],
            vec![lb(0.1, 0.1, 0.1, 1)],
        ];
        let others = vec![
            GroundTruth::default(),
            GroundTruth::default(),
            GroundTruth::new(vec![lb(0.7, 0.7, 0.2, 1)]),
        ];
        let m = patch_metrics(&dets, &patches, &others, 3, 0.5, ApStyle::ElevenPoint);
        assert_eq!(m.n_patches, 3);
        assert_eq!(m.patches_detected, 1);
        assert_eq!(m.true_positives, 1);
        assert_eq!(m.candidates, 3);
        assert!((m.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_is_arithmetic() {
        let a = PatchMetrics {
            n_patches: 2,
            patches_detected: 2,
            true_positives: 2,
            candidates: 2,
            precision: 1.0,
            recall: 1.0,
            precision_defined: true,
            map_all: 0.8,
        };
        let b = PatchMetrics { precision: 0.5, recall: 0.0, map_all: 0.4, ..a };
        let avg = average_patch_metrics(&[a, b]);
        assert!((avg.precision - 0.75).abs() < 1e-12);
        assert!((avg.recall - 0.5).abs() < 1e-12);
        assert!((avg.map_all - 0.6).abs() < 1e-12);
    }
}
