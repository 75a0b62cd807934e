//! Normalized bounding-box arithmetic, anchor grids and offset encoding.
//!
//! All coordinates are fractions of the image extent, so the same geometry
//! serves any raster resolution. Boxes are stored in center form
//! `(cx, cy, w, h)`; corner form `(x1, y1, x2, y2)` is derived on demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invalid_arg;

/// Scaling applied to center offsets in the encoded regression space.
pub const CENTER_VARIANCE: f64 = 0.1;
/// Scaling applied to log-size offsets in the encoded regression space.
pub const SIZE_VARIANCE: f64 = 0.2;

/// An axis-aligned box in center form, normalized to the unit square.
///
/// Width and height are strictly positive; centers may lie anywhere (anchors
/// near the border legitimately extend past `[0,1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(invalid_arg!("box has non-finite component"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(invalid_arg!("box dimensions must be positive, got w={w} h={h}"));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clip to the unit square. `None` when nothing of the box remains.
    pub fn clip_unit(&self) -> Option<BBox> {
        let (x1, y1, x2, y2) = self.corners();
        let x1 = x1.clamp(0.0, 1.0);
        let y1 = y1.clamp(0.0, 1.0);
        let x2 = x2.clamp(0.0, 1.0);
        let y2 = y2.clamp(0.0, 1.0);
        if x2 > x1 && y2 > y1 {
            Some(BBox::from_corners(x1, y1, x2, y2).expect("clipped box is valid"))
        } else {
            None
        }
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint.
///
/// Areas come from the same corner values as the intersection, so identical
/// boxes score exactly 1 regardless of rounding in the center/size form.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    inter / (area_a + area_b - inter)
}

/// A regression target relative to one anchor: either absent (the anchor is
/// background) or four encoded components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OffsetVector {
    Undefined,
    Defined([f64; 4]),
}

impl OffsetVector {
    pub fn is_defined(&self) -> bool {
        matches!(self, OffsetVector::Defined(_))
    }

    pub fn values(&self) -> Option<&[f64; 4]> {
        match self {
            OffsetVector::Defined(v) => Some(v),
            OffsetVector::Undefined => None,
        }
    }
}

/// Encode `gt` relative to `anchor`: scaled center deltas and scaled log size
/// ratios. Exactly inverted by [`decode_offsets`].
pub fn encode_offsets(anchor: &BBox, gt: &BBox) -> OffsetVector {
    OffsetVector::Defined([
        (gt.cx - anchor.cx) / (CENTER_VARIANCE * anchor.w),
        (gt.cy - anchor.cy) / (CENTER_VARIANCE * anchor.h),
        (gt.w / anchor.w).ln() / SIZE_VARIANCE,
        (gt.h / anchor.h).ln() / SIZE_VARIANCE,
    ])
}

/// Reconstruct the box encoded by `off` relative to `anchor`.
///
/// Rejects `Undefined`; no clipping happens here so the round trip with
/// [`encode_offsets`] is exact.
pub fn decode_offsets(anchor: &BBox, off: &OffsetVector) -> Result<BBox> {
    let v = off
        .values()
        .ok_or_else(|| invalid_arg!("cannot decode an undefined offset"))?;
    BBox::new(
        anchor.cx + v[0] * CENTER_VARIANCE * anchor.w,
        anchor.cy + v[1] * CENTER_VARIANCE * anchor.h,
        anchor.w * (SIZE_VARIANCE * v[2]).exp(),
        anchor.h * (SIZE_VARIANCE * v[3]).exp(),
    )
}

/// Raw offset components as a plain array, for prediction fields.
pub fn decode_raw(anchor: &BBox, off: &[f64; 4]) -> Result<BBox> {
    decode_offsets(anchor, &OffsetVector::Defined(*off))
}

/// One pyramid level of the anchor tiling: a `grid` x `grid` lattice of cell
/// centers, each carrying one anchor per aspect ratio at the level scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub grid: usize,
    pub scale: f64,
    pub ratios: Vec<f64>,
}

/// Full anchor tiling specification, ordered from finest grid (smallest
/// anchors) to coarsest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridSpec {
    pub levels: Vec<LevelSpec>,
}

impl AnchorGridSpec {
    /// Default tiling used by the small detector: 8x8 / 4x4 / 2x2 grids with
    /// two aspect ratios per cell, 168 anchors in total.
    pub fn toy_default() -> Self {
        let ratios = vec![1.0, 1.3];
        AnchorGridSpec {
            levels: vec![
                LevelSpec { grid: 8, scale: 0.20, ratios: ratios.clone() },
                LevelSpec { grid: 4, scale: 0.33, ratios: ratios.clone() },
                LevelSpec { grid: 2, scale: 0.52, ratios },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(invalid_arg!("anchor spec has no levels"));
        }
        let mut prev_scale = 0.0;
        for (i, lvl) in self.levels.iter().enumerate() {
            if lvl.grid == 0 {
                return Err(invalid_arg!("level {i}: grid must be positive"));
            }
            if !(lvl.scale > 0.0) {
                return Err(invalid_arg!("level {i}: scale must be positive"));
            }
            if lvl.ratios.is_empty() {
                return Err(invalid_arg!("level {i}: needs at least one aspect ratio"));
            }
            if lvl.ratios.iter().any(|r| !(*r > 0.0)) {
                return Err(invalid_arg!("level {i}: aspect ratios must be positive"));
            }
            if lvl.scale <= prev_scale {
                return Err(invalid_arg!("levels must be ordered by increasing anchor scale"));
            }
            prev_scale = lvl.scale;
        }
        Ok(())
    }

    /// Compact textual form used in configuration files:
    /// `grid:scale:ratio,ratio;...` per level, e.g. `8:0.2:1,1.3;4:0.33:1,1.3`.
    pub fn to_compact(&self) -> String {
        self.levels
            .iter()
            .map(|l| {
                let ratios = l
                    .ratios
                    .iter()
                    .map(|r| format!("{r}"))
                    .collect::<Vec<_>>()
                    .join(",");
                format!("{}:{}:{}", l.grid, l.scale, ratios)
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_compact(s: &str) -> Result<Self> {
        let mut levels = Vec::new();
        for part in s.split(';') {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "anchor level `{part}` is not grid:scale:ratios"
                )));
            }
            let grid = fields[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad grid `{}`: {e}", fields[0])))?;
            let scale = fields[1]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad scale `{}`: {e}", fields[1])))?;
            let mut ratios = Vec::new();
            for r in fields[2].split(',') {
                ratios.push(
                    r.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad ratio `{r}`: {e}")))?,
                );
            }
            levels.push(LevelSpec { grid, scale, ratios });
        }
        let spec = AnchorGridSpec { levels };
        spec.validate()?;
        Ok(spec)
    }
}

/// Structured position of an anchor inside the tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorIndex {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub k: usize,
}

/// The realized anchor tiling: every anchor box plus the flat-index layout.
///
/// Flat order is level-major, then row-major cells, then ratio index, so the
/// anchors of one level form a contiguous range.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    spec: AnchorGridSpec,
    boxes: Vec<BBox>,
    level_offsets: Vec<usize>, // level_offsets[l]..level_offsets[l+1]
}

/// Deterministically build the tiling described by `spec`.
pub fn build_anchor_set(spec: &AnchorGridSpec) -> Result<AnchorSet> {
    spec.validate()?;
    let mut boxes = Vec::new();
    let mut level_offsets = vec![0usize];
    for lvl in &spec.levels {
        let g = lvl.grid;
        for row in 0..g {
            for col in 0..g {
                let cx = (col as f64 + 0.5) / g as f64;
                let cy = (row as f64 + 0.5) / g as f64;
                for ratio in &lvl.ratios {
                    let w = lvl.scale * ratio.sqrt();
                    let h = lvl.scale / ratio.sqrt();
                    boxes.push(BBox::new(cx, cy, w, h)?);
                }
            }
        }
        level_offsets.push(boxes.len());
    }
    Ok(AnchorSet { spec: spec.clone(), boxes, level_offsets })
}

impl AnchorSet {
    pub fn spec(&self) -> &AnchorGridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn num_levels(&self) -> usize {
        self.spec.levels.len()
    }

    /// Flat-index range of one level.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.level_offsets[level]..self.level_offsets[level + 1]
    }

    pub fn level_of(&self, flat: usize) -> usize {
        debug_assert!(flat < self.len());
        // levels are few; linear scan beats a binary search here
        let mut level = 0;
        while flat >= self.level_offsets[level + 1] {
            level += 1;
        }
        level
    }

    pub fn unflatten(&self, flat: usize) -> AnchorIndex {
        let level = self.level_of(flat);
        let lvl = &self.spec.levels[level];
        let k_count = lvl.ratios.len();
        let within = flat - self.level_offsets[level];
        let cell = within / k_count;
        AnchorIndex {
            level,
            row: cell / lvl.grid,
            col: cell % lvl.grid,
            k: within % k_count,
        }
    }

    pub fn flatten(&self, idx: &AnchorIndex) -> usize {
        let lvl = &self.spec.levels[idx.level];
        self.level_offsets[idx.level] + (idx.row * lvl.grid + idx.col) * lvl.ratios.len() + idx.k
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.01..0.9f64, 0.01..0.9f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn offsets_round_trip(anchor in arb_box(), gt in arb_box()) {
            let decoded = decode_offsets(&anchor, &encode_offsets(&anchor, &gt)).unwrap();
            prop_assert!((decoded.cx - gt.cx).abs() < 1e-9);
            prop_assert!((decoded.cy - gt.cy).abs() < 1e-9);
            prop_assert!((decoded.w - gt.w).abs() < 1e-9);
            prop_assert!((decoded.h - gt.h).abs() < 1e-9);
        }

        #[test]
        fn flat_index_is_a_bijection(flat in 0usize..168) {
            let set = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
            let idx = set.unflatten(flat);
            prop_assert_eq!(set.flatten(&idx), flat);
        }
    }
}
