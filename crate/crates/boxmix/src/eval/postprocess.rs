//! From raw prediction fields to final detections: score thresholding, box
//! decoding and greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{decode_raw, AnchorSet, BBox};
use crate::invalid_arg;
use crate::loss::{softmax, PredictionField};

/// One scored, classified box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Turn a prediction field into candidate detections.
///
/// Every `(anchor, object class)` pair whose softmax score reaches
/// `score_thr` yields one detection with the decoded box clipped to the unit
/// square. Output order is anchor-major, then class, which downstream code
/// relies on as the insertion order for tie-breaking.
pub fn decode_predictions(
    preds: &PredictionField,
    anchors: &AnchorSet,
    score_thr: f64,
) -> Result<Vec<Detection>> {
    if preds.n_anchors() != anchors.len() {
        return Err(invalid_arg!(
            "{} prediction rows for {} anchors",
            preds.n_anchors(),
            anchors.len()
        ));
    }
    let width = preds.num_classes + 1;
    let mut out = Vec::new();
    for (a, anchor) in anchors.boxes().iter().enumerate() {
        let scores = softmax(preds.logits_of(a));
        let mut decoded: Option<BBox> = None;
        for c in 1..width {
            if scores[c] < score_thr {
                continue;
            }
            if decoded.is_none() {
                decoded = Some(decode_raw(anchor, preds.offsets_of(a))?);
            }
            // boxes that decode entirely outside the image cannot be reported
            if let Some(clipped) = decoded.expect("set above").clip_unit() {
                out.push(Detection { bbox: clipped, class_id: c, score: scores[c] });
            }
        }
    }
    Ok(out)
}

/// Greedy per-class suppression followed by a global top-k cut; returns the
/// indices of surviving detections, score-sorted.
///
/// Detections are visited by descending score (ties by input position); one
/// survives if it overlaps every earlier survivor of its class below
/// `iou_thr`. Survivors are then re-ranked by score across classes and
/// truncated to `top_k`.
pub fn nms_indices(dets: &[Detection], iou_thr: f64, top_k: usize) -> Result<Vec<usize>> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(invalid_arg!("suppression threshold must lie in (0,1), got {iou_thr}"));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|a, b| {
        dets[*b]
            .score
            .partial_cmp(&dets[*a].score)
            .expect("finite scores")
            .then(a.cmp(b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let survives = kept.iter().all(|&j| {
            dets[j].class_id != dets[i].class_id
                || crate::geometry::iou(&dets[j].bbox, &dets[i].bbox) < iou_thr
        });
        if survives {
            kept.push(i);
        }
    }
    kept.truncate(top_k);
    Ok(kept)
}

/// [`nms_indices`], materialized as the surviving detections.
pub fn nms(dets: &[Detection], iou_thr: f64, top_k: usize) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, iou_thr, top_k)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_anchor_set, AnchorGridSpec};
    use crate::matching::BACKGROUND;

    fn det(cx: f64, cy: f64, s: f64, class_id: usize, score: f64) -> Detection {
        Detection { bbox: BBox::new(cx, cy, s, s).unwrap(), class_id, score }
    }

    #[test]
    fn uniform_logits_below_threshold() {
        let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
        let preds = PredictionField::zeros(anchors.len(), 3);
        let dets = decode_predictions(&preds, &anchors, 0.3).unwrap();
        assert!(dets.is_empty(), "0.25 per class never reaches 0.3");
    }

    #[test]
    fn zero_threshold_emits_every_pair() {
        let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
        let preds = PredictionField::zeros(anchors.len(), 3);
        let dets = decode_predictions(&preds, &anchors, 0.0).unwrap();
        assert_eq!(dets.len(), anchors.len() * 3);
    }

    #[test]
    fn single_confident_logit() {
        let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
        let mut preds = PredictionField::zeros(anchors.len(), 3);
        preds.logits[17 * 4 + 2] = 6.0;
        let dets = decode_predictions(&preds, &anchors, 0.3).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, 2);
        let expect = softmax(&[0.0, 0.0, 6.0, 0.0])[2];
        assert!((dets[0].score - expect).abs() < 1e-12);
    }

    #[test]
    fn nms_single_detection_survives() {
        let d = vec![det(0.5, 0.5, 0.2, 1, 0.9)];
        assert_eq!(nms(&d, 0.45, 200).unwrap(), d);
    }

    #[test]
    fn nms_suppresses_identical_boxes() {
        let d = vec![det(0.5, 0.5, 0.2, 1, 0.8), det(0.5, 0.5, 0.2, 1, 0.9)];
        let kept = nms(&d, 0.45, 200).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_other_classes() {
        let d = vec![det(0.5, 0.5, 0.2, 1, 0.9), det(0.5, 0.5, 0.2, 2, 0.8)];
        assert_eq!(nms(&d, 0.45, 200).unwrap().len(), 2);
    }

    #[test]
    fn nms_respects_top_k() {
        let d: Vec<Detection> = (0..10)
            .map(|i| det(0.05 + 0.09 * i as f64, 0.5, 0.05, 1, 0.5 + 0.01 * i as f64))
            .collect();
        let kept = nms(&d, 0.45, 4).unwrap();
        assert_eq!(kept.len(), 4);
        assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn nms_matches_brute_force_on_random_inputs() {
        let mut rng = crate::rng::stream(19, "nms-oracle", &[]);
        for trial in 0..50 {
            let n = 50;
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let b = crate::oracle::random_box(&mut rng);
                    Detection {
                        bbox: b,
                        class_id: (crate::oracle::uniform(&mut rng, 0.0, 3.0) as usize) + 1,
                        score: crate::oracle::uniform(&mut rng, 0.0, 1.0),
                    }
                })
                .collect();
            let fast = nms(&dets, 0.45, 20).unwrap();
            let slow = crate::oracle::brute_force_nms(&dets, 0.45, 20);
            assert_eq!(fast, slow, "trial {trial}");
        }
    }

    #[test]
    fn nms_rejects_bad_threshold() {
        assert!(nms(&[], 0.0, 10).is_err());
        assert!(nms(&[], 1.0, 10).is_err());
    }

    #[test]
    fn background_is_never_emitted() {
        let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
        let mut preds = PredictionField::zeros(anchors.len(), 3);
        for a in 0..anchors.len() {
            preds.logits[a * 4 + BACKGROUND] = 9.0;
        }
        let dets = decode_predictions(&preds, &anchors, 0.0).unwrap();
        assert!(dets.iter().all(|d| d.class_id != BACKGROUND));
    }
}
