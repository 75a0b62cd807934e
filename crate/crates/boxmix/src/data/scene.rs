//! Deterministic shapes-scene generator.
//!
//! Scenes are flat-colored geometric shapes over a lightly textured dark
//! background. Placement is rejection-sampled so that every emitted box keeps
//! a healthy overlap with the anchor tiling; sizes and the smallest anchor
//! grid otherwise conspire to leave some boxes unmatchable near cell corners.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{build_anchor_set, iou, AnchorGridSpec, AnchorSet, BBox};
use crate::image::ImageTensor;
use crate::invalid_arg;
use crate::matching::{GroundTruth, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn for_class(class_id: usize) -> ShapeKind {
        match (class_id - 1) % 3 {
            0 => ShapeKind::Circle,
            1 => ShapeKind::Square,
            _ => ShapeKind::Triangle,
        }
    }

    /// Tight box height for a scale-`s` instance (width is always `s`).
    pub fn height_for_scale(&self, s: f64) -> f64 {
        match self {
            ShapeKind::Triangle => s * 3f64.sqrt() / 2.0,
            _ => s,
        }
    }
}

/// Scene recipe. `object_scale` is the tight-box width as a fraction of the
/// image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub classes: Vec<String>,
    pub objects_per_image: (usize, usize),
    pub object_scale: (f64, f64),
    pub background_noise: f64,
    pub color_jitter: f64,
    pub seed: u64,
    /// Tiling used to vet placements.
    pub anchors: AnchorGridSpec,
    /// Minimum best-anchor overlap a placement must reach.
    pub min_anchor_iou: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 64,
            classes: vec!["circle".into(), "square".into(), "triangle".into()],
            objects_per_image: (1, 4),
            object_scale: (0.15, 0.5),
            background_noise: 0.02,
            color_jitter: 0.1,
            seed: 0,
            anchors: AnchorGridSpec::toy_default(),
            min_anchor_iou: 0.45,
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(invalid_arg!("image size {} is too small", self.image_size));
        }
        if self.classes.len() < 2 {
            return Err(invalid_arg!("need at least 2 classes"));
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || hi < lo {
            return Err(invalid_arg!("bad object count range [{lo},{hi}]"));
        }
        let (slo, shi) = self.object_scale;
        if !(slo > 0.0 && shi >= slo && shi <= 1.0) {
            return Err(invalid_arg!("bad object scale range [{slo},{shi}]"));
        }
        if self.background_noise < 0.0 || self.color_jitter < 0.0 {
            return Err(invalid_arg!("noise and jitter levels must be non-negative"));
        }
        if !(self.min_anchor_iou > 0.0 && self.min_anchor_iou < 1.0) {
            return Err(invalid_arg!("placement overlap bound must lie in (0,1)"));
        }
        self.anchors.validate()
    }
}

/// One object ready to rasterize.
#[derive(Debug, Clone, Copy)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub bbox: BBox,
    pub class_id: usize,
    pub color: [f64; 3],
}

/// Horizontal extent `(x_lo, x_hi)` of the shape at height `y`, or `None`
/// outside the vertical span. `min_halfwidth` widens needle-thin rows (the
/// triangle apex, circle poles) so every row of the tight box lights at least
/// one pixel center without growing the mask beyond half a pixel.
pub fn shape_row_span(
    kind: ShapeKind,
    bbox: &BBox,
    y: f64,
    min_halfwidth: f64,
) -> Option<(f64, f64)> {
    let (x1, y1, x2, y2) = bbox.corners();
    if y < y1 || y > y2 {
        return None;
    }
    let half = match kind {
        ShapeKind::Square => bbox.w / 2.0,
        ShapeKind::Circle => {
            let r = bbox.w / 2.0;
            let dy = y - bbox.cy;
            (r * r - dy * dy).max(0.0).sqrt()
        }
        // apex up: width grows linearly from the apex row to the base
        ShapeKind::Triangle => (bbox.w / 2.0) * ((y - y1) / bbox.h),
    };
    let half = half.clamp(min_halfwidth, (x2 - x1) / 2.0);
    Some((bbox.cx - half, bbox.cx + half))
}

fn rasterize(image: &mut ImageTensor, shape: &PlacedShape) {
    let s = image.width as f64;
    let min_halfwidth = 0.501 / s;
    let (_, y1, _, y2) = shape.bbox.corners();
    let py_lo = ((y1 * s - 0.5).ceil().max(0.0)) as usize;
    for py in py_lo..image.height {
        let y = (py as f64 + 0.5) / s;
        if y > y2 {
            break;
        }
        if let Some((lo, hi)) = shape_row_span(shape.kind, &shape.bbox, y, min_halfwidth) {
            let px_lo = ((lo * s - 0.5).ceil().max(0.0)) as usize;
            for px in px_lo..image.width {
                let x = (px as f64 + 0.5) / s;
                if x > hi {
                    break;
                }
                for c in 0..3 {
                    image.set(py, px, c, shape.color[c]);
                }
            }
        }
    }
}

/// Best overlap between a box and any anchor of the tiling.
pub fn best_anchor_iou(bbox: &BBox, anchors: &AnchorSet) -> f64 {
    anchors
        .boxes()
        .iter()
        .map(|a| iou(a, bbox))
        .fold(0.0, f64::max)
}

const PLACEMENT_ATTEMPTS: usize = 200;

fn place_object<R: Rng + ?Sized>(
    spec: &SceneSpec,
    anchors: &AnchorSet,
    rng: &mut R,
) -> PlacedShape {
    let margin = 0.5 / spec.image_size as f64;
    let mut best: Option<(f64, PlacedShape)> = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let class_id = rng.random_range(1..=spec.num_classes());
        let kind = ShapeKind::for_class(class_id);
        let s = rng.random_range(spec.object_scale.0..=spec.object_scale.1);
        let w = s;
        let h = kind.height_for_scale(s);
        let cx = rng.random_range(w / 2.0 + margin..1.0 - w / 2.0 - margin);
        let cy = rng.random_range(h / 2.0 + margin..1.0 - h / 2.0 - margin);
        let color = [
            rng.random_range(0.35..1.0),
            rng.random_range(0.35..1.0),
            rng.random_range(0.35..1.0),
        ];
        let bbox = BBox::new(cx, cy, w, h).expect("in range");
        let shape = PlacedShape { kind, bbox, class_id, color };
        let overlap = best_anchor_iou(&bbox, anchors);
        if overlap >= spec.min_anchor_iou {
            return shape;
        }
        if best.as_ref().map_or(true, |(o, _)| overlap > *o) {
            best = Some((overlap, shape));
        }
    }
    // overwhelmingly unlikely; keep the most coverable candidate
    best.expect("at least one attempt").1
}

/// Render one scene. Deterministic for a given generator state.
pub fn render_scene<R: Rng + ?Sized>(
    spec: &SceneSpec,
    anchors: &AnchorSet,
    rng: &mut R,
) -> (ImageTensor, GroundTruth) {
    let s = spec.image_size;
    let base = 0.10 + 0.08 * rng.random_range(0.0..1.0);
    let mut image = ImageTensor::filled(s, s, 3, base);
    if spec.background_noise > 0.0 {
        for v in image.data.iter_mut() {
            *v = (*v + rng.random_range(-spec.background_noise..spec.background_noise))
                .clamp(0.0, 1.0);
        }
    }
    let n = rng.random_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let mut boxes = Vec::with_capacity(n);
    for _ in 0..n {
        let shape = place_object(spec, anchors, rng);
        rasterize(&mut image, &shape);
        boxes.push(LabeledBox { bbox: shape.bbox, class_id: shape.class_id });
    }
    (image, GroundTruth::new(boxes))
}

/// Scene for item `index` of the dataset described by `spec`.
pub fn render_item(spec: &SceneSpec, anchors: &AnchorSet, index: u64) -> (ImageTensor, GroundTruth) {
    let mut rng = crate::rng::stream(spec.seed, "scene-item", &[index]);
    render_scene(spec, anchors, &mut rng)
}

/// Convenience wrapper building the tiling once.
pub fn build_placement_anchors(spec: &SceneSpec) -> Result<AnchorSet> {
    build_anchor_set(&spec.anchors)
}
