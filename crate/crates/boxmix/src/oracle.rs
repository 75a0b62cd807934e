//! Independent reference implementations used to cross-check the fast paths.
//!
//! Everything here favors literal transcription of a definition over speed:
//! the matcher scores every pair, suppression is quadratic, precision/recall
//! curves are recomputed from scratch per prefix, and the eigendecomposition
//! is a dense Jacobi sweep. These routines back both the test suites and the
//! `selfcheck` command; they must never share a code path with the
//! implementations they verify.

use rand::Rng;

use crate::eval::Detection;
use crate::geometry::{AnchorSet, BBox};
use crate::matching::{GroundTruth, LabeledBox};

// ---------------------------------------------------------------------------
// randomized-input helpers

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// A random probability vector of length `k`.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -uniform(rng, 0.0, 1.0f64).max(1e-12).ln()).collect();
    let sum: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    // force exact normalization so strict validators accept it
    let correction: f64 = 1.0 - p.iter().sum::<f64>();
    p[0] += correction;
    p
}

pub fn random_box<R: Rng + ?Sized>(rng: &mut R) -> BBox {
    let w = uniform(rng, 0.05, 0.6);
    let h = uniform(rng, 0.05, 0.6);
    let cx = uniform(rng, w / 2.0, 1.0 - w / 2.0);
    let cy = uniform(rng, h / 2.0, 1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).expect("constructed in range")
}

pub fn random_ground_truth<R: Rng + ?Sized>(
    rng: &mut R,
    num_classes: usize,
    max_boxes: usize,
) -> GroundTruth {
    let n = rng.random_range(0..=max_boxes);
    GroundTruth::new(
        (0..n)
            .map(|_| LabeledBox {
                bbox: random_box(rng),
                class_id: rng.random_range(1..=num_classes),
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// overlap, written against corner coordinates rather than center form

pub fn iou_reference(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let ix1 = ax1.max(bx1);
    let iy1 = ay1.max(by1);
    let ix2 = ax2.min(bx2);
    let iy2 = ay2.min(by2);
    if ix2 <= ix1 || iy2 <= iy1 {
        return 0.0;
    }
    let inter = (ix2 - ix1) * (iy2 - iy1);
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    inter / union
}

// ---------------------------------------------------------------------------
// matcher

/// Literal per-anchor assignment: rule 1 thresholds against the best box,
/// rule 2 forces one anchor per box, resolving shared favorites in favor of
/// the larger overlap. Returns the assigned box index per anchor.
///
/// Greedy decisions here compare overlap values against each other, and
/// symmetric tilings produce mathematically tied pairs, so this reference
/// shares the overlap kernel with the implementation (the kernel itself is
/// cross-checked against [`iou_reference`] separately) and restates only the
/// assignment rules.
pub fn brute_force_match(y: &GroundTruth, anchors: &[BBox], tau: f64) -> Vec<Option<usize>> {
    let n = anchors.len();
    let m = y.boxes.len();
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    if m == 0 {
        return assignment;
    }
    let overlap = |a: usize, g: usize| crate::geometry::iou(&anchors[a], &y.boxes[g].bbox);

    for a in 0..n {
        let mut best_g = 0usize;
        for g in 1..m {
            if overlap(a, g) > overlap(a, best_g) {
                best_g = g;
            }
        }
        if overlap(a, best_g) > tau {
            assignment[a] = Some(best_g);
        }
    }

    let mut gt_done = vec![false; m];
    let mut anchor_taken = vec![false; n];
    for _ in 0..m.min(n) {
        let mut best: Option<(f64, usize, usize)> = None;
        for g in 0..m {
            if gt_done[g] {
                continue;
            }
            for a in 0..n {
                if anchor_taken[a] {
                    continue;
                }
                let o = overlap(a, g);
                let replace = match best {
                    None => true,
                    Some((bo, ba, bg)) => o > bo || (o == bo && (a < ba || (a == ba && g < bg))),
                };
                if replace {
                    best = Some((o, a, g));
                }
            }
        }
        let (_, a, g) = best.expect("a free pair always exists while boxes remain");
        gt_done[g] = true;
        anchor_taken[a] = true;
        assignment[a] = Some(g);
    }
    assignment
}

/// Convenience view over an [`AnchorSet`] for comparisons.
pub fn brute_force_match_set(y: &GroundTruth, anchors: &AnchorSet, tau: f64) -> Vec<Option<usize>> {
    brute_force_match(y, anchors.boxes(), tau)
}

// ---------------------------------------------------------------------------
// suppression

/// Quadratic restatement of greedy per-class suppression followed by a global
/// top-k cut.
pub fn brute_force_nms(dets: &[Detection], iou_thr: f64, top_k: usize) -> Vec<Detection> {
    // score-descending order, ties by original position
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
        let mut suppressed = false;
        for &j in &kept {
            if dets[j].class_id == dets[i].class_id
                && iou_reference(&dets[j].bbox, &dets[i].bbox) >= iou_thr
            {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    kept.truncate(top_k);
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

// ---------------------------------------------------------------------------
// precision/recall by prefix re-enumeration

/// Matching outcome of a fixed detection prefix against one class.
fn prefix_true_positives(
    prefix: &[(usize, &Detection)], // (image, detection), already score-ordered
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
) -> usize {
    let mut matched: Vec<Vec<bool>> = gts_per_image
        .iter()
        .map(|g| vec![false; g.boxes.len()])
        .collect();
    let mut tp = 0;
    for (img, det) in prefix {
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts_per_image[*img].boxes.iter().enumerate() {
            if gt.class_id != class_id || matched[*img][gi] {
                continue;
            }
            let o = iou_reference(&det.bbox, &gt.bbox);
            let better = match best {
                None => o > 0.0,
                Some((bo, _)) => o > bo,
            };
            if better {
                best = Some((o, gi));
            }
        }
        if let Some((o, gi)) = best {
            if o >= iou_thr {
                matched[*img][gi] = true;
                tp += 1;
            }
        }
    }
    tp
}

/// Precision/recall points for one class, one point per detection prefix,
/// each recomputed from scratch.
pub fn brute_force_pr_curve(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
) -> (Vec<(f64, f64)>, usize) {
    let n_gt: usize = gts_per_image
        .iter()
        .map(|g| g.boxes.iter().filter(|b| b.class_id == class_id).count())
        .sum();
    let mut all: Vec<(usize, &Detection)> = Vec::new();
    for (img, dets) in dets_per_image.iter().enumerate() {
        for d in dets {
            if d.class_id == class_id {
                all.push((img, d));
            }
        }
    }
    // global order: score desc, then image, then per-image position
    all.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .expect("finite scores")
            .then(a.0.cmp(&b.0))
    });
    let mut curve = Vec::with_capacity(all.len());
    for k in 1..=all.len() {
        let tp = prefix_true_positives(&all[..k], gts_per_image, class_id, iou_thr);
        let precision = tp as f64 / k as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        curve.push((recall, precision));
    }
    (curve, n_gt)
}

// ---------------------------------------------------------------------------
// COCO-style summary, by per-prefix re-enumeration at every threshold

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CocoReference {
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

fn coco_rank(
    dets_per_image: &[Vec<Detection>],
    class_id: usize,
    budget: Option<usize>,
) -> Vec<(usize, usize)> {
    let mut ranked = Vec::new();
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
    ranked
}

/// Run the shared greedy convention from scratch over one ranked prefix.
/// Returns (true positives, detections that counted toward precision).
#[allow(clippy::too_many_arguments)]
fn coco_prefix(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
    range: (f64, f64),
    prefix: &[(usize, usize)],
) -> (usize, usize) {
    let in_range = |a: f64| a >= range.0 && a < range.1;
    let mut claimed: Vec<Vec<bool>> = gts_per_image
        .iter()
        .map(|g| vec![false; g.boxes.len()])
        .collect();
    let mut tp = 0usize;
    let mut counted = 0usize;
    for (img, i) in prefix {
        let det = &dets_per_image[*img][*i];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts_per_image[*img].boxes.iter().enumerate() {
            if gt.class_id != class_id || !in_range(gt.bbox.area()) || claimed[*img][gi] {
                continue;
            }
            let o = iou_reference(&det.bbox, &gt.bbox);
            if o > best.map_or(0.0, |(bo, _)| bo) {
                best = Some((o, gi));
            }
        }
        if let Some((o, gi)) = best {
            if o >= iou_thr {
                claimed[*img][gi] = true;
                tp += 1;
                counted += 1;
                continue;
            }
        }
        let absorbed = gts_per_image[*img].boxes.iter().any(|gt| {
            gt.class_id == class_id
                && !in_range(gt.bbox.area())
                && iou_reference(&det.bbox, &gt.bbox) >= iou_thr
        });
        if !absorbed {
            counted += 1;
        }
    }
    (tp, counted)
}

/// (average precision, final recall) for one class/threshold/range/budget, or
/// `None` when the class has no in-range truth.
fn coco_evaluate(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    class_id: usize,
    iou_thr: f64,
    range: (f64, f64),
    budget: Option<usize>,
) -> Option<(f64, f64)> {
    let in_range = |a: f64| a >= range.0 && a < range.1;
    let n_gt: usize = gts_per_image
        .iter()
        .map(|g| {
            g.boxes
                .iter()
                .filter(|b| b.class_id == class_id && in_range(b.bbox.area()))
                .count()
        })
        .sum();
    if n_gt == 0 {
        return None;
    }
    let ranked = coco_rank(dets_per_image, class_id, budget);
    let mut curve = Vec::new();
    let mut prev_counted = 0usize;
    let mut final_tp = 0usize;
    for k in 1..=ranked.len() {
        let (tp, counted) = coco_prefix(
            dets_per_image, gts_per_image, class_id, iou_thr, range, &ranked[..k],
        );
        if counted > prev_counted {
            curve.push((tp as f64 / n_gt as f64, tp as f64 / counted as f64));
            prev_counted = counted;
        }
        final_tp = tp;
    }
    Some((ap_all_point(&curve), final_tp as f64 / n_gt as f64))
}

/// Literal restatement of the COCO-style table: every number is a mean of
/// per-(class, threshold) quantities recomputed by prefix enumeration.
pub fn brute_force_coco(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[GroundTruth],
    num_classes: usize,
) -> CocoReference {
    use crate::eval::coco::{AREA_MEDIUM_MAX, AREA_SMALL_MAX, COCO_THRESHOLDS};
    let all = (0.0, f64::INFINITY);
    let small = (0.0, AREA_SMALL_MAX);
    let medium = (AREA_SMALL_MAX, AREA_MEDIUM_MAX);
    let large = (AREA_MEDIUM_MAX, f64::INFINITY);

    let mean_ap = |range: (f64, f64), thresholds: &[f64], budget: Option<usize>| -> f64 {
        let mut sum = 0.0;
        let mut counted = 0usize;
        for class_id in 1..=num_classes {
            let per_thr: Vec<f64> = thresholds
                .iter()
                .filter_map(|t| {
                    coco_evaluate(dets_per_image, gts_per_image, class_id, *t, range, budget)
                        .map(|(ap, _)| ap)
                })
                .collect();
            if per_thr.len() == thresholds.len() && !per_thr.is_empty() {
                sum += per_thr.iter().sum::<f64>() / per_thr.len() as f64;
                counted += 1;
            }
        }
        if counted > 0 { sum / counted as f64 } else { 0.0 }
    };
    let mean_ar = |range: (f64, f64), budget: usize| -> f64 {
        let mut sum = 0.0;
        let mut counted = 0usize;
        for class_id in 1..=num_classes {
            let per_thr: Vec<f64> = COCO_THRESHOLDS
                .iter()
                .filter_map(|t| {
                    coco_evaluate(
                        dets_per_image, gts_per_image, class_id, *t, range, Some(budget),
                    )
                    .map(|(_, r)| r)
                })
                .collect();
            if per_thr.len() == COCO_THRESHOLDS.len() {
                sum += per_thr.iter().sum::<f64>() / per_thr.len() as f64;
                counted += 1;
            }
        }
        if counted > 0 { sum / counted as f64 } else { 0.0 }
    };

    CocoReference {
        ap: mean_ap(all, &COCO_THRESHOLDS, None),
        ap50: mean_ap(all, &[0.50], None),
        ap75: mean_ap(all, &[0.75], None),
        ap_small: mean_ap(small, &COCO_THRESHOLDS, None),
        ap_medium: mean_ap(medium, &COCO_THRESHOLDS, None),
        ap_large: mean_ap(large, &COCO_THRESHOLDS, None),
        ar1: mean_ar(all, 1),
        ar10: mean_ar(all, 10),
        ar100: mean_ar(all, 100),
        ar_small: mean_ar(small, 100),
        ar_medium: mean_ar(medium, 100),
        ar_large: mean_ar(large, 100),
    }
}

/// Average precision from a PR curve by 11-point interpolation.
pub fn ap_eleven_point(curve: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for i in 0..=10 {
        let r = i as f64 / 10.0;
        let p = curve
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, prec)| *prec)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 11.0
}

/// Average precision as the area under the interpolated PR envelope.
pub fn ap_all_point(curve: &[(f64, f64)]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, (r, _)) in curve.iter().enumerate() {
        if *r > prev_recall {
            let envelope = curve[i..].iter().map(|(_, p)| *p).fold(0.0, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = *r;
        }
    }
    ap
}

// ---------------------------------------------------------------------------
// symmetric eigendecomposition (cyclic Jacobi)

/// Eigenvalues of a symmetric matrix, descending. `mat` is row-major `d*d`.
pub fn jacobi_eigenvalues(mat: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(mat.len(), d * d);
    let mut a = mat.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    eig
}

/// Leading-eigenvalue share of total variance, straight from the sample
/// covariance and a dense eigendecomposition.
pub fn pca_ratio_reference(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let d = rows[0].len();
    assert!(n >= 2);
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if trace <= 0.0 {
        return 1.0;
    }
    let eig = jacobi_eigenvalues(&cov, d);
    eig[0] / trace
}

// ---------------------------------------------------------------------------
// finite differences

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

// ---------------------------------------------------------------------------
// composed gradient check

/// Largest relative disagreement between analytic parameter gradients of the
/// full detector-plus-criterion composite and central finite differences.
/// Mining is saturated (every anchor kept) so the objective is smooth at the
/// probe point; the gate itself is piecewise constant and carries no gradient.
pub fn detector_gradient_check(seed: u64) -> (f64, usize) {
    use crate::detector::{backward, forward, init_params, DetectorSpec, ParamSet};
    use crate::geometry::build_anchor_set;
    use crate::image::ImageTensor;
    use crate::loss::{detection_loss, detection_loss_gradients};
    use crate::matching::match_targets;

    let spec = DetectorSpec::tiny(3);
    let anchors = build_anchor_set(&spec.anchors).expect("tiny spec is valid");
    let params = init_params(&spec, seed).expect("tiny spec is valid");
    let mut rng = crate::rng::stream(seed, "gradcheck", &[]);
    let side = spec.input_side();
    let image = ImageTensor::new(
        side,
        side,
        3,
        (0..side * side * 3).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
    )
    .expect("payload sized");
    let gt = loop {
        let y = random_ground_truth(&mut rng, 3, 4);
        if !y.boxes.is_empty() {
            break y;
        }
    };
    let targets = match_targets(&gt, &anchors, 3, 0.5).expect("valid threshold");
    let ratio = 1e6; // saturate mining: keep-mask boundaries would break the probe

    let rebuild = |flat: &[f64], like: &ParamSet| -> ParamSet {
        let mut p = like.clone();
        let mut at = 0;
        for b in &mut p.blocks {
            let len = b.data.len();
            b.data.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        p
    };

    let (preds, cache) = forward(&spec, &params, &image).expect("forward");
    let (_, dlogits, doffsets) =
        detection_loss_gradients(&targets, &preds, ratio, None).expect("aligned");
    let analytic = backward(&spec, &params, &cache, &dlogits, &doffsets)
        .expect("matching cache")
        .flat();

    let flat = params.flat();
    let mut f = |x: &[f64]| -> f64 {
        let p = rebuild(x, &params);
        let (preds, _) = forward(&spec, &p, &image).expect("forward");
        detection_loss(&targets, &preds, ratio).expect("aligned").total
    };
    let fd = central_difference(&mut f, &flat, 1e-5);

    let mut worst = 0.0f64;
    for (a, g) in analytic.iter().zip(&fd) {
        let rel = (a - g).abs() / a.abs().max(g.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
        }
    }
    (worst, flat.len())
}

// ---------------------------------------------------------------------------
// embedded verification suite

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_small_tiling(rng: &mut impl Rng) -> crate::geometry::AnchorGridSpec {
    use crate::geometry::{AnchorGridSpec, LevelSpec};
    let n_levels = rng.random_range(1..=2);
    let mut levels = Vec::new();
    let mut scale = uniform(rng, 0.1, 0.3);
    let mut grid = rng.random_range(4..=7);
    for _ in 0..n_levels {
        let n_ratios = rng.random_range(1..=2);
        let ratios = (0..n_ratios).map(|_| uniform(rng, 0.6, 1.8)).collect();
        levels.push(LevelSpec { grid, scale, ratios });
        scale *= uniform(rng, 1.5, 2.0);
        grid = (grid / 2).max(1);
    }
    AnchorGridSpec { levels }
}

/// Run every embedded correctness check. Deterministic order and content.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    use crate::eval::coco::coco_ap;
    use crate::eval::map::{voc_map, ApStyle};
    use crate::eval::nms;
    use crate::eval::pca::pca_first_component_ratio;
    use crate::geometry::{build_anchor_set, encode_offsets, iou};
    use crate::matching::{match_targets, LabelDistribution};
    use crate::mixing::sample_lambda;

    let mut out = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        out.push(CheckOutcome { name, passed, detail });
    };

    // overlap kernel vs corner-space restatement
    {
        let mut rng = crate::rng::stream(101, "selfcheck-iou", &[]);
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            worst = worst.max((iou(&a, &b) - iou_reference(&a, &b)).abs());
        }
        push("iou vs reference", worst < 1e-12, format!("max |diff| = {worst:.2e}"));
    }

    // matcher vs literal rule transcription
    {
        let mut rng = crate::rng::stream(102, "selfcheck-match", &[]);
        let mut mismatches = 0usize;
        let mut cases = 0usize;
        for _ in 0..60 {
            let spec = random_small_tiling(&mut rng);
            let anchors = match build_anchor_set(&spec) {
                Ok(a) if a.len() <= 200 => a,
                _ => continue,
            };
            let y = random_ground_truth(&mut rng, 3, 8);
            let got = match match_targets(&y, &anchors, 3, 0.5) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let expect = brute_force_match(&y, anchors.boxes(), 0.5);
            cases += 1;
            for (a, assignment) in expect.iter().enumerate() {
                let (want_label, want_offset) = match assignment {
                    Some(g) => (
                        LabelDistribution::one_hot(y.boxes[*g].class_id, 3),
                        encode_offsets(&anchors.boxes()[a], &y.boxes[*g].bbox),
                    ),
                    None => (
                        LabelDistribution::background(3),
                        crate::geometry::OffsetVector::Undefined,
                    ),
                };
                if got.labels[a] != want_label || got.offsets[a] != want_offset {
                    mismatches += 1;
                }
            }
        }
        push(
            "matcher vs brute force",
            mismatches == 0 && cases >= 50,
            format!("{mismatches} anchor mismatches over {cases} instances"),
        );
    }

    // suppression vs quadratic restatement
    {
        let mut rng = crate::rng::stream(103, "selfcheck-nms", &[]);
        let mut bad = 0usize;
        for _ in 0..100 {
            let dets: Vec<Detection> = (0..60)
                .map(|_| Detection {
                    bbox: random_box(&mut rng),
                    class_id: rng.random_range(1..=3),
                    score: uniform(&mut rng, 0.0, 1.0),
                })
                .collect();
            let fast = nms(&dets, 0.45, 25).expect("valid threshold");
            let slow = brute_force_nms(&dets, 0.45, 25);
            if fast != slow {
                bad += 1;
            }
        }
        push("nms vs brute force", bad == 0, format!("{bad} mismatching instances of 100"));
    }

    // ranked-precision metrics vs prefix re-enumeration
    {
        let mut rng = crate::rng::stream(104, "selfcheck-map", &[]);
        let mut worst = 0.0f64;
        for _ in 0..40 {
            let gts: Vec<GroundTruth> =
                (0..3).map(|_| random_ground_truth(&mut rng, 2, 5)).collect();
            let dets: Vec<Vec<Detection>> = gts
                .iter()
                .map(|g| {
                    let mut v: Vec<Detection> = g
                        .boxes
                        .iter()
                        .map(|b| Detection {
                            bbox: b.bbox,
                            class_id: rng.random_range(1..=2),
                            score: uniform(&mut rng, 0.1, 1.0),
                        })
                        .collect();
                    v.push(Detection {
                        bbox: random_box(&mut rng),
                        class_id: rng.random_range(1..=2),
                        score: uniform(&mut rng, 0.1, 1.0),
                    });
                    v
                })
                .collect();
            for style in [ApStyle::ElevenPoint, ApStyle::AllPoint] {
                let fast = voc_map(&dets, &gts, 2, 0.5, style);
                for class_id in 1..=2 {
                    let (curve, n_gt) = brute_force_pr_curve(&dets, &gts, class_id, 0.5);
                    if n_gt == 0 {
                        continue;
                    }
                    let slow = match style {
                        ApStyle::ElevenPoint => ap_eleven_point(&curve),
                        ApStyle::AllPoint => ap_all_point(&curve),
                    };
                    worst = worst.max((fast.per_class[class_id - 1].ap - slow).abs());
                }
            }
        }
        push("average precision vs enumeration", worst < 1e-12, format!("max |diff| = {worst:.2e}"));
    }

    // threshold-averaged summary vs enumeration
    {
        let mut rng = crate::rng::stream(105, "selfcheck-coco", &[]);
        let mut worst = 0.0f64;
        for _ in 0..6 {
            let gts: Vec<GroundTruth> =
                (0..3).map(|_| random_ground_truth(&mut rng, 2, 4)).collect();
            let dets: Vec<Vec<Detection>> = gts
                .iter()
                .map(|g| {
                    g.boxes
                        .iter()
                        .map(|b| Detection {
                            bbox: b.bbox,
                            class_id: b.class_id,
                            score: uniform(&mut rng, 0.1, 1.0),
                        })
                        .collect()
                })
                .collect();
            let fast = coco_ap(&dets, &gts, 2);
            let slow = brute_force_coco(&dets, &gts, 2);
            for (a, b) in [
                (fast.ap, slow.ap),
                (fast.ap50, slow.ap50),
                (fast.ap75, slow.ap75),
                (fast.ar1, slow.ar1),
                (fast.ar10, slow.ar10),
                (fast.ar100, slow.ar100),
                (fast.ap_small, slow.ap_small),
                (fast.ap_medium, slow.ap_medium),
                (fast.ap_large, slow.ap_large),
            ] {
                worst = worst.max((a - b).abs());
            }
        }
        push("summary metrics vs enumeration", worst < 1e-12, format!("max |diff| = {worst:.2e}"));
    }

    // analytic gradients of the trained composite
    {
        let (worst, n) = detector_gradient_check(106);
        push(
            "gradient check",
            worst < 1e-4,
            format!("max relative error {worst:.2e} over {n} parameters"),
        );
    }

    // soft-target criterion is linear in the target
    {
        let mut rng = crate::rng::stream(107, "selfcheck-linearity", &[]);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let p = LabelDistribution::new(random_distribution(&mut rng, 4)).expect("normalized");
            let q = LabelDistribution::new(random_distribution(&mut rng, 4)).expect("normalized");
            let z: Vec<f64> = (0..4).map(|_| uniform(&mut rng, -4.0, 4.0)).collect();
            let lam = uniform(&mut rng, 0.0, 1.0);
            let mixed = p.mix(&q, lam);
            let lhs = crate::loss::classification_loss(&mixed, &z);
            let rhs = lam * crate::loss::classification_loss(&p, &z)
                + (1.0 - lam) * crate::loss::classification_loss(&q, &z);
            worst = worst.max((lhs - rhs).abs());
        }
        push("criterion linearity", worst < 1e-12, format!("max |diff| = {worst:.2e}"));
    }

    // mixing-weight moments
    {
        let mut passed = true;
        let mut detail = String::new();
        for alpha in [0.2f64, 0.75, 1.5] {
            let mut rng = crate::rng::stream(108, "selfcheck-beta", &[alpha.to_bits()]);
            let n = 100_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| sample_lambda(alpha, &mut rng).expect("alpha > 0").lambda)
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var =
                draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let expect_var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
            let se_mean = (expect_var / n as f64).sqrt();
            let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
            let se_var = ((m4 - expect_var * expect_var) / n as f64).sqrt();
            let ok = (mean - 0.5).abs() < 3.0 * se_mean
                && (var - expect_var).abs() < 3.0 * se_var;
            passed &= ok;
            detail.push_str(&format!("alpha={alpha}: mean {mean:.4}, var {var:.4}; "));
        }
        push("mixing-weight moments", passed, detail);
    }

    // leading-component share vs dense eigendecomposition
    {
        let mut rng = crate::rng::stream(109, "selfcheck-pca", &[]);
        let mut worst = 0.0f64;
        for trial in 0..50 {
            let n = 3 + (trial % 17);
            let d = 2 + (trial % 6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect())
                .collect();
            let fast = pca_first_component_ratio(&rows).expect("enough rows").ratio;
            let slow = pca_ratio_reference(&rows);
            worst = worst.max((fast - slow).abs());
        }
        push("variance share vs eigendecomposition", worst < 1e-9, format!("max |diff| = {worst:.2e}"));
    }

    out
}
