//! Image corruptions for the robustness studies: additive Gaussian noise and
//! patch transplantation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::image::ImageTensor;
use crate::invalid_arg;
use crate::geometry::BBox;
use crate::data::scene::{shape_row_span, ShapeKind};

/// Per-sample additive Gaussian noise, clamped back to [0,1].
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    image: &ImageTensor,
    sigma: f64,
    rng: &mut R,
) -> ImageTensor {
    debug_assert!(sigma >= 0.0);
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = (*v + sigma * z).clamp(0.0, 1.0);
    }
    out
}

/// An RGBA stamp: color image plus per-pixel opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: ImageTensor,
    /// `height * width` opacity values in [0,1].
    pub alpha: Vec<f64>,
}

impl Patch {
    pub fn fully_transparent(side: usize) -> Patch {
        Patch {
            image: ImageTensor::filled(side, side, 3, 0.0),
            alpha: vec![0.0; side * side],
        }
    }
}

/// A class-labeled patch from the bank.
#[derive(Debug, Clone)]
pub struct PatchEntry {
    pub class_id: usize,
    pub patch: Patch,
}

/// Render a square canvas holding one shape of the class, opaque inside the
/// shape and transparent elsewhere.
pub fn render_patch(class_id: usize, color: [f64; 3], side: usize) -> Patch {
    let kind = ShapeKind::for_class(class_id);
    // shape spans the full canvas width; the triangle is vertically centered
    let h = kind.height_for_scale(1.0);
    let bbox = BBox::new(0.5, 0.5, 1.0, h).expect("valid");
    let s = side as f64;
    let mut patch = Patch::fully_transparent(side);
    for py in 0..side {
        let y = (py as f64 + 0.5) / s;
        if let Some((lo, hi)) = shape_row_span(kind, &bbox, y, 0.501 / s) {
            for px in 0..side {
                let x = (px as f64 + 0.5) / s;
                if x >= lo && x <= hi {
                    for c in 0..3 {
                        patch.image.set(py, px, c, color[c]);
                    }
                    patch.alpha[py * side + px] = 1.0;
                }
            }
        }
    }
    patch
}

/// Deterministic bank with `variants` color variants per class.
pub fn render_patch_bank(num_classes: usize, variants: usize, side: usize, seed: u64) -> Vec<PatchEntry> {
    let mut rng = crate::rng::stream(seed, "patch-bank", &[]);
    let mut bank = Vec::with_capacity(num_classes * variants);
    for class_id in 1..=num_classes {
        for _ in 0..variants {
            let color = [
                rng.random_range(0.35..1.0),
                rng.random_range(0.35..1.0),
                rng.random_range(0.35..1.0),
            ];
            bank.push(PatchEntry { class_id, patch: render_patch(class_id, color, side) });
        }
    }
    bank
}

/// Paste `patch` at a uniform random position, scaled so its square footprint
/// has side `scale` in normalized units. Returns the altered image and the
/// footprint box. Pixels sample the patch nearest-neighbor and blend by its
/// opacity.
pub fn transplant_patch<R: Rng + ?Sized>(
    image: &ImageTensor,
    patch: &Patch,
    scale: f64,
    rng: &mut R,
) -> Result<(ImageTensor, BBox)> {
    if !(0.0..=1.0).contains(&scale) || scale <= 0.0 {
        return Err(invalid_arg!("patch scale {scale} does not fit inside the image"));
    }
    if patch.image.height != patch.image.width {
        return Err(invalid_arg!("patch canvases are square"));
    }
    let x1 = rng.random_range(0.0..=1.0 - scale);
    let y1 = rng.random_range(0.0..=1.0 - scale);
    let bbox = BBox::new(x1 + scale / 2.0, y1 + scale / 2.0, scale, scale)?;

    let mut out = image.clone();
    let (hpx, wpx) = (image.height as f64, image.width as f64);
    let src = patch.image.height as f64;
    let py_lo = (y1 * hpx - 0.5).ceil().max(0.0) as usize;
    let px_lo = (x1 * wpx - 0.5).ceil().max(0.0) as usize;
    for py in py_lo..image.height {
        let v = ((py as f64 + 0.5) / hpx - y1) / scale;
        if v >= 1.0 {
            break;
        }
        if v < 0.0 {
            continue;
        }
        for px in px_lo..image.width {
            let u = ((px as f64 + 0.5) / wpx - x1) / scale;
            if u >= 1.0 {
                break;
            }
            if u < 0.0 {
                continue;
            }
            let sy = ((v * src) as usize).min(patch.image.height - 1);
            let sx = ((u * src) as usize).min(patch.image.width - 1);
            let a = patch.alpha[sy * patch.image.width + sx];
            if a == 0.0 {
                continue;
            }
            for c in 0..3 {
                let blended = a * patch.image.get(sy, sx, c) + (1.0 - a) * out.get(py, px, c);
                out.set(py, px, c, blended);
            }
        }
    }
    Ok((out, bbox))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = ImageTensor::filled(8, 8, 3, 0.5);
        let mut rng = crate::rng::stream(1, "noise-test", &[]);
        let out = add_gaussian_noise(&img, 0.0, &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn noise_stays_bounded_and_scaled() {
        let img = ImageTensor::filled(64, 64, 3, 0.5);
        let mut rng = crate::rng::stream(2, "noise-test", &[]);
        for &sigma in &[0.1, 0.2, 0.4] {
            let out = add_gaussian_noise(&img, sigma, &mut rng);
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // mid-gray keeps most draws unclipped at sigma = 0.1; the sample
        // deviation of (noisy - clean) tracks sigma
        let out = add_gaussian_noise(&img, 0.1, &mut rng);
        let n = out.data.len() as f64;
        let var = out
            .data
            .iter()
            .zip(&img.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        assert!((sd - 0.1).abs() < 0.002, "sample sd {sd}");
    }

    #[test]
    fn transparent_patch_changes_nothing() {
        let img = ImageTensor::filled(64, 64, 3, 0.3);
        let patch = Patch::fully_transparent(48);
        let mut rng = crate::rng::stream(3, "patch-test", &[]);
        let (out, bbox) = transplant_patch(&img, &patch, 0.25, &mut rng).unwrap();
        assert_eq!(out, img);
        assert!((bbox.w - 0.25).abs() < 1e-12);
    }

    #[test]
    fn opaque_patch_replaces_pixels() {
        let img = ImageTensor::filled(64, 64, 3, 0.3);
        let mut patch = Patch::fully_transparent(16);
        for v in patch.alpha.iter_mut() {
            *v = 1.0;
        }
        for v in patch.image.data.iter_mut() {
            *v = 0.9;
        }
        let mut rng = crate::rng::stream(4, "patch-test", &[]);
        let (out, bbox) = transplant_patch(&img, &patch, 0.3, &mut rng).unwrap();
        let (x1, y1, x2, y2) = bbox.corners();
        let mut inside = 0usize;
        for py in 0..64 {
            for px in 0..64 {
                let (x, y) = ((px as f64 + 0.5) / 64.0, (py as f64 + 0.5) / 64.0);
                let within = x >= x1 && x < x2 && y >= y1 && y < y2;
                if within {
                    inside += 1;
                    assert_eq!(out.get(py, px, 0), 0.9);
                } else {
                    assert_eq!(out.get(py, px, 0), 0.3);
                }
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn footprint_area_tracks_the_linear_scale() {
        let img = ImageTensor::filled(64, 64, 3, 0.3);
        let patch = render_patch(1, [0.8, 0.2, 0.2], 48);
        let mut rng = crate::rng::stream(5, "patch-area", &[]);
        for _ in 0..100 {
            let scale = crate::oracle::uniform(&mut rng, 0.1, 0.4);
            let (_, bbox) = transplant_patch(&img, &patch, scale, &mut rng).unwrap();
            let frac = bbox.area();
            assert!((0.01..=0.16).contains(&frac), "area fraction {frac}");
            assert!((frac - scale * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_covers_classes_and_variants() {
        let bank = render_patch_bank(3, 3, 48, 7);
        assert_eq!(bank.len(), 9);
        for class_id in 1..=3 {
            assert_eq!(bank.iter().filter(|e| e.class_id == class_id).count(), 3);
        }
        // deterministic
        let again = render_patch_bank(3, 3, 48, 7);
        for (a, b) in bank.iter().zip(&again) {
            assert_eq!(a.patch, b.patch);
        }
        // opaque inside; circles and triangles keep transparent corners,
        // squares legitimately fill the whole canvas
        for e in &bank {
            assert!(e.patch.alpha.iter().any(|a| *a == 1.0));
            match ShapeKind::for_class(e.class_id) {
                ShapeKind::Square => {}
                _ => assert!(e.patch.alpha.iter().any(|a| *a == 0.0)),
            }
        }
    }
}
