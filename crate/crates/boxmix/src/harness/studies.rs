//! Evaluation campaigns: plain accuracy, the noise sweep, the repeated patch
//! transplant study, and the variance-concentration comparison.

use rand::Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use super::train::thread_pool;
use crate::data::corrupt::{add_gaussian_noise, transplant_patch, PatchEntry};
use crate::data::LoadedDataset;
use crate::detector::{forward, DetectorSpec, ParamSet};
use crate::error::{Error, Result};
use crate::eval::map::{voc_map, ApStyle, VocMapResult};
use crate::eval::patch::{average_patch_metrics, patch_metrics};
use crate::eval::pca::pca_first_component_ratio;
use crate::eval::postprocess::{decode_predictions, nms, Detection};
use crate::eval::report::{FlatteningRow, FlatteningTable, NoiseRow, NoiseTable, PatchTable};
use crate::eval::coco::{coco_ap, CocoMetrics};
use crate::geometry::{build_anchor_set, AnchorSet};
use crate::image::ImageTensor;
use crate::matching::{GroundTruth, LabeledBox};

/// Post-processed detections for one image at the evaluation score cut.
pub fn detect_image(
    spec: &DetectorSpec,
    params: &ParamSet,
    anchors: &AnchorSet,
    config: &RunConfig,
    image: &ImageTensor,
) -> Result<Vec<Detection>> {
    let (preds, _) = forward(spec, params, image)?;
    let dets = decode_predictions(&preds, anchors, config.eval_score_threshold)?;
    nms(&dets, config.nms_threshold, config.top_k)
}

/// Detections for a whole set of images, in input order.
pub fn detect_all(
    spec: &DetectorSpec,
    params: &ParamSet,
    anchors: &AnchorSet,
    config: &RunConfig,
    images: &[ImageTensor],
) -> Result<Vec<Vec<Detection>>> {
    let pool = thread_pool(config.threads)?;
    pool.install(|| {
        images
            .par_iter()
            .map(|img| detect_image(spec, params, anchors, config, img))
            .collect()
    })
}

/// Standard accuracy over a split: per-class AP and its mean at 0.5 overlap,
/// plus the COCO-style table.
pub fn evaluate_split(
    spec: &DetectorSpec,
    params: &ParamSet,
    config: &RunConfig,
    dataset: &LoadedDataset,
) -> Result<(VocMapResult, CocoMetrics)> {
    let anchors = build_anchor_set(&config.anchors)?;
    let gts: Vec<GroundTruth> =
        dataset.manifest.items.iter().map(|i| i.ground_truth()).collect();
    let dets = detect_all(spec, params, &anchors, config, &dataset.images)?;
    let voc = voc_map(&dets, &gts, config.num_classes, 0.5, ApStyle::ElevenPoint);
    let coco = coco_ap(&dets, &gts, config.num_classes);
    Ok((voc, coco))
}

/// Accuracy under additive noise, one row per level. Noise is freshly drawn
/// per image from streams derived off `eval_seed`, so the table reproduces
/// exactly for a fixed seed.
pub fn noise_sweep(
    spec: &DetectorSpec,
    params: &ParamSet,
    config: &RunConfig,
    dataset: &LoadedDataset,
    sigmas: &[f64],
    eval_seed: u64,
) -> Result<NoiseTable> {
    let anchors = build_anchor_set(&config.anchors)?;
    let gts: Vec<GroundTruth> =
        dataset.manifest.items.iter().map(|i| i.ground_truth()).collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        if sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("negative noise level {sigma}")));
        }
        let noisy: Vec<ImageTensor> = dataset
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                if sigma == 0.0 {
                    img.clone()
                } else {
                    let mut rng =
                        crate::rng::stream(eval_seed, "noise", &[si as u64, i as u64]);
                    add_gaussian_noise(img, sigma, &mut rng)
                }
            })
            .collect();
        let dets = detect_all(spec, params, &anchors, config, &noisy)?;
        let map = voc_map(&dets, &gts, config.num_classes, 0.5, ApStyle::ElevenPoint).map;
        rows.push(NoiseRow { sigma, map });
    }
    Ok(NoiseTable { rows })
}

/// Transplant one random patch into every image, `copies` times over, and
/// score patch detection at each overlap threshold. Results are the
/// across-copy averages.
pub fn patch_study(
    spec: &DetectorSpec,
    params: &ParamSet,
    config: &RunConfig,
    dataset: &LoadedDataset,
    bank: &[PatchEntry],
    copies: usize,
    thresholds: &[f64],
    eval_seed: u64,
) -> Result<Vec<PatchTable>> {
    if bank.is_empty() {
        return Err(Error::InvalidArgument("patch bank is empty".into()));
    }
    if copies == 0 {
        return Err(Error::InvalidArgument("need at least one patched copy".into()));
    }
    let anchors = build_anchor_set(&config.anchors)?;
    let others: Vec<GroundTruth> =
        dataset.manifest.items.iter().map(|i| i.ground_truth()).collect();

    // per copy: patched images and their patch annotations
    let mut per_copy_dets: Vec<Vec<Vec<Detection>>> = Vec::with_capacity(copies);
    let mut per_copy_patches: Vec<Vec<Vec<LabeledBox>>> = Vec::with_capacity(copies);
    for copy in 0..copies {
        let mut patched = Vec::with_capacity(dataset.images.len());
        let mut patch_gts: Vec<Vec<LabeledBox>> = Vec::with_capacity(dataset.images.len());
        for (i, img) in dataset.images.iter().enumerate() {
            let mut rng =
                crate::rng::stream(eval_seed, "patch", &[copy as u64, i as u64]);
            let entry = &bank[rng.random_range(0..bank.len())];
            let scale = rng.random_range(0.1..=0.4);
            let (out, bbox) = transplant_patch(img, &entry.patch, scale, &mut rng)?;
            patched.push(out);
            patch_gts.push(vec![LabeledBox { bbox, class_id: entry.class_id }]);
        }
        per_copy_dets.push(detect_all(spec, params, &anchors, config, &patched)?);
        per_copy_patches.push(patch_gts);
    }

    let mut tables = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let per_copy: Vec<_> = (0..copies)
            .map(|c| {
                patch_metrics(
                    &per_copy_dets[c],
                    &per_copy_patches[c],
                    &others,
                    config.num_classes,
                    thr,
                    ApStyle::ElevenPoint,
                )
            })
            .collect();
        tables.push(PatchTable {
            iou_thr: thr,
            copies,
            metrics: average_patch_metrics(&per_copy),
        });
    }
    Ok(tables)
}

/// Most frequent instance class of an image, ties toward the lower id.
/// `None` for images without any annotation.
pub fn dominant_label(gt: &GroundTruth, num_classes: usize) -> Option<usize> {
    if gt.boxes.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; num_classes + 1];
    for b in &gt.boxes {
        counts[b.class_id] += 1;
    }
    (1..=num_classes).max_by_key(|c| (counts[*c], usize::MAX - c))
}

/// Per-level logit rows of one model over a set of images.
fn logit_rows(
    spec: &DetectorSpec,
    params: &ParamSet,
    anchors: &AnchorSet,
    config: &RunConfig,
    images: &[&ImageTensor],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let pool = thread_pool(config.threads)?;
    let width = config.num_classes + 1;
    let fields: Vec<Result<Vec<f64>>> = pool.install(|| {
        images
            .par_iter()
            .map(|img| forward(spec, params, img).map(|(p, _)| p.logits))
            .collect()
    });
    let mut per_level: Vec<Vec<Vec<f64>>> = vec![Vec::new(); anchors.num_levels()];
    for field in fields {
        let logits = field?;
        for (l, rows) in per_level.iter_mut().enumerate() {
            let range = anchors.level_range(l);
            rows.push(logits[range.start * width..range.end * width].to_vec());
        }
    }
    Ok(per_level)
}

/// Compare how much of each group's logit variance sits on the first
/// principal component, per anchor level, between two checkpoints of the same
/// architecture. Rows with class 0 pool every annotated image.
pub fn flattening_study(
    spec: &DetectorSpec,
    params_base: &ParamSet,
    params_mix: &ParamSet,
    config: &RunConfig,
    dataset: &LoadedDataset,
) -> Result<FlatteningTable> {
    let anchors = build_anchor_set(&config.anchors)?;
    let gts: Vec<GroundTruth> =
        dataset.manifest.items.iter().map(|i| i.ground_truth()).collect();

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new(); // (class, image indices)
    let mut merged: Vec<usize> = Vec::new();
    for class_id in 1..=config.num_classes {
        groups.push((class_id, Vec::new()));
    }
    for (i, gt) in gts.iter().enumerate() {
        if let Some(label) = dominant_label(gt, config.num_classes) {
            groups[label - 1].1.push(i);
            merged.push(i);
        }
    }
    groups.push((0, merged));

    let mut rows = Vec::new();
    for (class_id, indices) in &groups {
        if indices.len() < 2 {
            for level in 0..anchors.num_levels() {
                rows.push(FlatteningRow {
                    class_id: *class_id,
                    level,
                    n_images: indices.len(),
                    ratio_a: 0.0,
                    ratio_b: 0.0,
                    difference: 0.0,
                    skipped: true,
                });
            }
            continue;
        }
        let images: Vec<&ImageTensor> = indices.iter().map(|i| &dataset.images[*i]).collect();
        let rows_base = logit_rows(spec, params_base, &anchors, config, &images)?;
        let rows_mix = logit_rows(spec, params_mix, &anchors, config, &images)?;
        for level in 0..anchors.num_levels() {
            let a = pca_first_component_ratio(&rows_base[level])?;
            let b = pca_first_component_ratio(&rows_mix[level])?;
            rows.push(FlatteningRow {
                class_id: *class_id,
                level,
                n_images: indices.len(),
                ratio_a: a.ratio,
                ratio_b: b.ratio,
                difference: b.ratio - a.ratio,
                skipped: false,
            });
        }
    }
    Ok(FlatteningTable { rows })
}

/// Fixed-width bin counts of Beta(alpha, alpha) draws, for external plotting.
pub fn beta_histogram(alpha: f64, n: usize, bins: usize, seed: u64) -> Result<Vec<usize>> {
    if bins == 0 || n == 0 {
        return Err(Error::InvalidArgument("need positive draw and bin counts".into()));
    }
    let mut rng = crate::rng::stream(seed, "beta-histogram", &[]);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let lam = crate::mixing::sample_lambda(alpha, &mut rng)?.lambda;
        let bin = ((lam * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Detections above the reporting score cut, serialized as CSV rows.
pub fn detections_csv_rows(dets_per_image: &[Vec<Detection>], files: &[String], cut: f64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (img, dets) in dets_per_image.iter().enumerate() {
        for d in dets {
            if d.score < cut {
                continue;
            }
            let (x1, y1, x2, y2) = d.bbox.corners();
            rows.push(vec![
                files[img].clone(),
                d.class_id.to_string(),
                format!("{}", d.score),
                format!("{x1}"),
                format!("{y1}"),
                format!("{x2}"),
                format!("{y2}"),
            ]);
        }
    }
    rows
}
