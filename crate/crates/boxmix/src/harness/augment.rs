//! Training-time augmentation: horizontal flips, color jitter, random crops.
//!
//! Boxes follow every pixel transform exactly. The crop resamples by area
//! averaging, which keeps the rendered-mask-vs-annotation agreement within a
//! pixel even for fractional crop windows.

use rand::Rng;

use crate::geometry::BBox;
use crate::image::ImageTensor;
use crate::matching::{GroundTruth, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip_prob: f64,
    /// Brightness factor range half-width; per-channel gain uses half of it.
    pub jitter: f64,
    pub crop_prob: f64,
    /// Smallest crop window side, as a fraction of the image.
    pub crop_min: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { hflip_prob: 0.5, jitter: 0.2, crop_prob: 0.5, crop_min: 0.8 }
    }
}

pub fn hflip(image: &ImageTensor, gt: &GroundTruth) -> (ImageTensor, GroundTruth) {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                out.set(y, x, c, image.get(y, image.width - 1 - x, c));
            }
        }
    }
    let boxes = gt
        .boxes
        .iter()
        .map(|b| LabeledBox {
            bbox: BBox::new(1.0 - b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h)
                .expect("mirrored box stays valid"),
            class_id: b.class_id,
        })
        .collect();
    (out, GroundTruth::new(boxes))
}

pub fn color_jitter(image: &ImageTensor, brightness: f64, gains: &[f64; 3]) -> ImageTensor {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                let v = out.get(y, x, c) * brightness * gains[c.min(2)];
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Area-averaged resample of the window `[x0, x0+side] x [y0, y0+side]`
/// (normalized) back to the full image size.
pub fn crop_resize(image: &ImageTensor, x0: f64, y0: f64, side: f64) -> ImageTensor {
    let (h, w) = (image.height, image.width);
    let mut out = ImageTensor::filled(h, w, image.channels, 0.0);
    for py in 0..h {
        // source row interval in source pixel units
        let sy_lo = (y0 + side * py as f64 / h as f64) * h as f64;
        let sy_hi = (y0 + side * (py + 1) as f64 / h as f64) * h as f64;
        for px in 0..w {
            let sx_lo = (x0 + side * px as f64 / w as f64) * w as f64;
            let sx_hi = (x0 + side * (px + 1) as f64 / w as f64) * w as f64;
            let mut acc = [0.0f64; 4];
            let mut total = 0.0;
            let iy_lo = sy_lo.floor().max(0.0) as usize;
            let iy_hi = (sy_hi.ceil() as usize).min(h);
            let ix_lo = sx_lo.floor().max(0.0) as usize;
            let ix_hi = (sx_hi.ceil() as usize).min(w);
            for iy in iy_lo..iy_hi {
                let wy = (sy_hi.min((iy + 1) as f64) - sy_lo.max(iy as f64)).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for ix in ix_lo..ix_hi {
                    let wx = (sx_hi.min((ix + 1) as f64) - sx_lo.max(ix as f64)).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    let weight = wx * wy;
                    total += weight;
                    for c in 0..image.channels {
                        acc[c] += weight * image.get(iy, ix, c);
                    }
                }
            }
            if total > 0.0 {
                for c in 0..image.channels {
                    out.set(py, px, c, acc[c] / total);
                }
            }
        }
    }
    out
}

/// Transform boxes through the crop: drop those whose center leaves the
/// window or that lose half their area, clip the rest and renormalize.
pub fn crop_boxes(gt: &GroundTruth, x0: f64, y0: f64, side: f64) -> GroundTruth {
    let mut boxes = Vec::new();
    for b in &gt.boxes {
        let (cx, cy) = (b.bbox.cx, b.bbox.cy);
        if cx < x0 || cx > x0 + side || cy < y0 || cy > y0 + side {
            continue;
        }
        let (bx1, by1, bx2, by2) = b.bbox.corners();
        let cx1 = bx1.max(x0);
        let cy1 = by1.max(y0);
        let cx2 = bx2.min(x0 + side);
        let cy2 = by2.min(y0 + side);
        if cx2 <= cx1 || cy2 <= cy1 {
            continue;
        }
        let kept_area = (cx2 - cx1) * (cy2 - cy1);
        if kept_area < 0.5 * b.bbox.area() {
            continue;
        }
        let bbox = BBox::from_corners(
            (cx1 - x0) / side,
            (cy1 - y0) / side,
            (cx2 - x0) / side,
            (cy2 - y0) / side,
        )
        .expect("clipped box is non-degenerate");
        boxes.push(LabeledBox { bbox, class_id: b.class_id });
    }
    GroundTruth::new(boxes)
}

/// What one augmentation call actually did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRecord {
    pub flipped: bool,
    pub brightness: f64,
    pub gains: [f64; 3],
    /// `(x0, y0, side)` of the applied crop window, if any.
    pub crop: Option<(f64, f64, f64)>,
}

/// Full augmentation pipeline for one image. Draw order is fixed so streams
/// stay aligned regardless of which transforms fire.
pub fn augment<R: Rng + ?Sized>(
    image: &ImageTensor,
    gt: &GroundTruth,
    params: &AugmentParams,
    rng: &mut R,
) -> (ImageTensor, GroundTruth) {
    let (image, gt, _) = augment_with_record(image, gt, params, rng);
    (image, gt)
}

/// [`augment`], additionally reporting the applied transform parameters.
pub fn augment_with_record<R: Rng + ?Sized>(
    image: &ImageTensor,
    gt: &GroundTruth,
    params: &AugmentParams,
    rng: &mut R,
) -> (ImageTensor, GroundTruth, AugmentRecord) {
    let do_flip = rng.random_range(0.0..1.0) < params.hflip_prob;
    let brightness = rng.random_range(1.0 - params.jitter..1.0 + params.jitter);
    let gains = [
        rng.random_range(1.0 - params.jitter / 2.0..1.0 + params.jitter / 2.0),
        rng.random_range(1.0 - params.jitter / 2.0..1.0 + params.jitter / 2.0),
        rng.random_range(1.0 - params.jitter / 2.0..1.0 + params.jitter / 2.0),
    ];
    let do_crop = rng.random_range(0.0..1.0) < params.crop_prob;
    let side = rng.random_range(params.crop_min..1.0);
    let x0 = rng.random_range(0.0..1.0 - side);
    let y0 = rng.random_range(0.0..1.0 - side);

    let mut record =
        AugmentRecord { flipped: do_flip, brightness, gains, crop: None };
    let (mut image, mut gt) = if do_flip { hflip(image, gt) } else { (image.clone(), gt.clone()) };
    image = color_jitter(&image, brightness, &gains);
    if do_crop {
        // keep scenes with annotations from degenerating to empty supervision
        let cropped_gt = crop_boxes(&gt, x0, y0, side);
        if gt.boxes.is_empty() || !cropped_gt.boxes.is_empty() {
            image = crop_resize(&image, x0, y0, side);
            gt = cropped_gt;
            record.crop = Some((x0, y0, side));
        }
    }
    (image, gt, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{build_placement_anchors, render_item, SceneSpec};

    #[test]
    fn flip_is_involutive_and_mirrors_boxes() {
        let spec = SceneSpec { objects_per_image: (1, 2), seed: 2, ..Default::default() };
        let anchors = build_placement_anchors(&spec).unwrap();
        let (img, gt) = render_item(&spec, &anchors, 0);
        let (flipped, fgt) = hflip(&img, &gt);
        let (back, bgt) = hflip(&flipped, &fgt);
        assert_eq!(back, img);
        assert_eq!(bgt, gt);
        for (a, b) in gt.boxes.iter().zip(&fgt.boxes) {
            assert_eq!(a.bbox.cx, 1.0 - b.bbox.cx);
            assert_eq!(a.bbox.cy, b.bbox.cy);
        }
    }

    #[test]
    fn jitter_keeps_bounds() {
        let spec = SceneSpec { seed: 3, ..Default::default() };
        let anchors = build_placement_anchors(&spec).unwrap();
        let (img, _) = render_item(&spec, &anchors, 1);
        let out = color_jitter(&img, 1.15, &[1.05, 0.95, 1.0]);
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn identity_crop_is_identity() {
        let spec = SceneSpec { seed: 4, ..Default::default() };
        let anchors = build_placement_anchors(&spec).unwrap();
        let (img, gt) = render_item(&spec, &anchors, 2);
        let out = crop_resize(&img, 0.0, 0.0, 1.0);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let cropped = crop_boxes(&gt, 0.0, 0.0, 1.0);
        assert_eq!(cropped.boxes.len(), gt.boxes.len());
    }

    #[test]
    fn crop_drops_out_of_window_centers_and_small_remnants() {
        let b = |cx: f64, cy: f64, s: f64| LabeledBox {
            bbox: BBox::new(cx, cy, s, s).unwrap(),
            class_id: 1,
        };
        let gt = GroundTruth::new(vec![b(0.1, 0.1, 0.1), b(0.5, 0.5, 0.2)]);
        let out = crop_boxes(&gt, 0.25, 0.25, 0.5);
        assert_eq!(out.boxes.len(), 1);
        let kept = &out.boxes[0].bbox;
        assert!((kept.cx - 0.5).abs() < 1e-12);
        assert!((kept.w - 0.4).abs() < 1e-12);
        // a box clipped at the window corner keeps its center but <50% area
        let gt = GroundTruth::new(vec![b(0.26, 0.26, 0.3)]);
        let out = crop_boxes(&gt, 0.25, 0.25, 0.5);
        assert!(out.boxes.is_empty(), "only ~28% of the area stays inside");
    }

    /// Tight box of pixels differing from the most frequent value triple,
    /// in pixel units `(x1, y1, x2, y2)`.
    fn mask_box(img: &ImageTensor) -> Option<(f64, f64, f64, f64)> {
        // quantized histogram: resampling leaves ULP-level variation on
        // otherwise uniform background values
        let quant = |v: f64| (v * 1e6).round() as i64;
        let mut counts: std::collections::HashMap<[i64; 3], (usize, [f64; 3])> =
            std::collections::HashMap::new();
        for py in 0..img.height {
            for px in 0..img.width {
                let v = [img.get(py, px, 0), img.get(py, px, 1), img.get(py, px, 2)];
                let key = [quant(v[0]), quant(v[1]), quant(v[2])];
                let e = counts.entry(key).or_insert((0, v));
                e.0 += 1;
            }
        }
        let bg = counts.values().max_by_key(|(c, _)| *c).unwrap().1;
        let mut lo = (usize::MAX, usize::MAX);
        let mut hi = (0usize, 0usize);
        let mut any = false;
        for py in 0..img.height {
            for px in 0..img.width {
                if (0..3).any(|c| (img.get(py, px, c) - bg[c]).abs() > 1e-4) {
                    any = true;
                    lo = (lo.0.min(px), lo.1.min(py));
                    hi = (hi.0.max(px), hi.1.max(py));
                }
            }
        }
        any.then_some((lo.0 as f64, lo.1 as f64, (hi.0 + 1) as f64, (hi.1 + 1) as f64))
    }

    #[test]
    fn flip_and_jitter_masks_track_annotations() {
        // exact transforms: the rendered mask must follow the box within one
        // pixel, exactly as in the raw scenes
        let spec = SceneSpec {
            objects_per_image: (1, 1),
            background_noise: 0.0,
            color_jitter: 0.0,
            seed: 6,
            ..Default::default()
        };
        let anchors = build_placement_anchors(&spec).unwrap();
        let params = AugmentParams { crop_prob: 0.0, ..Default::default() };
        let s = spec.image_size as f64;
        for i in 0..40 {
            let (img, gt) = render_item(&spec, &anchors, i);
            let mut rng = crate::rng::stream(1000 + i, "augment-test", &[]);
            let (aug, agt) = augment(&img, &gt, &params, &mut rng);
            let b = &agt.boxes[0].bbox;
            let (mx1, my1, mx2, my2) = mask_box(&aug).expect("object rendered");
            let (x1, y1, x2, y2) = b.corners();
            assert!((mx1 / s - x1).abs() <= 1.0 / s, "item {i} x1");
            assert!((my1 / s - y1).abs() <= 1.0 / s, "item {i} y1");
            assert!((mx2 / s - x2).abs() <= 1.0 / s, "item {i} x2");
            assert!((my2 / s - y2).abs() <= 1.0 / s, "item {i} y2");
        }
    }

    #[test]
    fn crop_moves_pixels_and_boxes_together() {
        // Resampling quantizes: the footprint of the source mask lands on
        // whole output pixels. So the check with no slack of its own is that
        // the output mask hull equals the affine image of the source mask
        // hull to within one pixel, with boxes transformed by the same
        // affine map (asserted via the record below).
        let spec = SceneSpec {
            objects_per_image: (1, 1),
            background_noise: 0.0,
            color_jitter: 0.0,
            seed: 12,
            ..Default::default()
        };
        let anchors = build_placement_anchors(&spec).unwrap();
        let params = AugmentParams { crop_prob: 1.0, hflip_prob: 0.5, ..Default::default() };
        let s = spec.image_size as f64;
        let mut checked = 0;
        for i in 0..60 {
            let (img, gt) = render_item(&spec, &anchors, i);
            let mut rng = crate::rng::stream(2000 + i, "augment-crop-test", &[]);
            let (aug, agt, rec) = augment_with_record(&img, &gt, &params, &mut rng);
            let Some((x0, y0, side)) = rec.crop else { continue };
            if agt.boxes.is_empty() {
                continue;
            }
            // skip objects sliced by the window: their clipped box is a
            // bounding-box approximation, not the visible-mask hull
            let b = &agt.boxes[0].bbox;
            let (x1, y1, x2, y2) = b.corners();
            let eps = 1e-9;
            if x1 < eps || y1 < eps || x2 > 1.0 - eps || y2 > 1.0 - eps {
                continue;
            }
            checked += 1;

            // rebuild the pre-crop image with the recorded draws
            let (pre, pre_gt) =
                if rec.flipped { hflip(&img, &gt) } else { (img.clone(), gt.clone()) };
            let pre = color_jitter(&pre, rec.brightness, &rec.gains);
            let (sx1, sy1, sx2, sy2) = mask_box(&pre).expect("object rendered");
            // the annotation transform is this same affine map
            let pre_b = &pre_gt.boxes[0].bbox;
            let (px1, py1, px2, py2) = pre_b.corners();
            assert!(((px1 - x0) / side - x1).abs() < 1e-12);
            assert!(((py1 - y0) / side - y1).abs() < 1e-12);
            assert!(((px2 - x0) / side - x2).abs() < 1e-12);
            assert!(((py2 - y0) / side - y2).abs() < 1e-12);

            let map = |v: f64, origin: f64| (v / s - origin) / side * s;
            let (ex1, ey1) = (map(sx1, x0), map(sy1, y0));
            let (ex2, ey2) = (map(sx2, x0), map(sy2, y0));
            let (mx1, my1, mx2, my2) = mask_box(&aug).expect("object visible");
            assert!((mx1 - ex1).abs() <= 1.0 + 1e-9, "item {i} x1: {mx1} vs {ex1}");
            assert!((my1 - ey1).abs() <= 1.0 + 1e-9, "item {i} y1: {my1} vs {ey1}");
            assert!((mx2 - ex2).abs() <= 1.0 + 1e-9, "item {i} x2: {mx2} vs {ex2}");
            assert!((my2 - ey2).abs() <= 1.0 + 1e-9, "item {i} y2: {my2} vs {ey2}");
        }
        assert!(checked > 20, "too few croppings exercised");
    }

    #[test]
    fn augmentation_is_deterministic_per_stream() {
        let spec = SceneSpec { seed: 8, ..Default::default() };
        let anchors = build_placement_anchors(&spec).unwrap();
        let (img, gt) = render_item(&spec, &anchors, 5);
        let params = AugmentParams::default();
        let mut rng_a = crate::rng::stream(3, "aug-det", &[0, 5]);
        let mut rng_b = crate::rng::stream(3, "aug-det", &[0, 5]);
        let (ia, ga) = augment(&img, &gt, &params, &mut rng_a);
        let (ib, gb) = augment(&img, &gt, &params, &mut rng_b);
        assert_eq!(ia, ib);
        assert_eq!(ga, gb);
    }
}
