//! C ABI over the boxmix core: box geometry, anchor tilings, target matching,
//! target mixing, mixing-weight sampling and suppression.
//!
//! Conventions:
//! - boxes cross the boundary as 4 doubles `(cx, cy, w, h)` in normalized
//!   coordinates; offsets as 4 doubles; label rows as `num_classes + 1`
//!   doubles with index 0 = background;
//! - every function returns a [`BmxStatus`]; outputs are written through
//!   caller-allocated buffers whose capacity the caller states;
//! - anchor tilings live behind the opaque [`BmxAnchorSet`] handle, created
//!   by `bmx_anchor_set_parse` and released by `bmx_anchor_set_free`.
//!
//! The header `include/boxmix.h` is generated by the build script.

use std::ffi::{c_char, CStr};

use boxmix::geometry::{
    build_anchor_set, decode_offsets, encode_offsets, iou, AnchorGridSpec, AnchorSet, BBox,
    OffsetVector,
};
use boxmix::matching::{match_targets, AnchorTargets, GroundTruth, LabelDistribution, LabeledBox, POSITIVE_EPS};
use boxmix::mixing::{box_mix, sample_lambda, MixWeight};

/// Call result. Everything except `Ok` leaves output buffers untouched.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmxStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Internal = 4,
}

/// Opaque anchor tiling.
pub struct BmxAnchorSet {
    inner: AnchorSet,
}

const VERSION: &CStr =
    match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string contains an interior nul"),
    };

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bmx_version() -> *const c_char {
    VERSION.as_ptr()
}

unsafe fn read_box(ptr: *const f64) -> Option<BBox> {
    let v = std::slice::from_raw_parts(ptr, 4);
    BBox::new(v[0], v[1], v[2], v[3]).ok()
}

/// Parse a compact tiling description (`grid:scale:ratios;...`) into a handle.
///
/// # Safety
/// `spec` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bmx_anchor_set_parse(
    spec: *const c_char,
    out: *mut *mut BmxAnchorSet,
) -> BmxStatus {
    if spec.is_null() || out.is_null() {
        return BmxStatus::NullArgument;
    }
    let Ok(text) = CStr::from_ptr(spec).to_str() else {
        return BmxStatus::InvalidArgument;
    };
    let Ok(grid) = AnchorGridSpec::parse_compact(text) else {
        return BmxStatus::InvalidArgument;
    };
    match build_anchor_set(&grid) {
        Ok(set) => {
            *out = Box::into_raw(Box::new(BmxAnchorSet { inner: set }));
            BmxStatus::Ok
        }
        Err(_) => BmxStatus::InvalidArgument,
    }
}

/// Release a handle returned by `bmx_anchor_set_parse`. Null is a no-op.
///
/// # Safety
/// `set` must come from `bmx_anchor_set_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bmx_anchor_set_free(set: *mut BmxAnchorSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of anchors in the tiling; 0 for a null handle.
///
/// # Safety
/// `set` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bmx_anchor_set_len(set: *const BmxAnchorSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.len()
}

/// Copy every anchor as `(cx, cy, w, h)` into `out` (capacity `cap` doubles).
///
/// # Safety
/// `out` must point to at least `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bmx_anchor_set_boxes(
    set: *const BmxAnchorSet,
    out: *mut f64,
    cap: usize,
) -> BmxStatus {
    if set.is_null() || out.is_null() {
        return BmxStatus::NullArgument;
    }
    let boxes = (*set).inner.boxes();
    if cap < boxes.len() * 4 {
        return BmxStatus::BufferTooSmall;
    }
    let dst = std::slice::from_raw_parts_mut(out, boxes.len() * 4);
    for (i, b) in boxes.iter().enumerate() {
        dst[i * 4] = b.cx;
        dst[i * 4 + 1] = b.cy;
        dst[i * 4 + 2] = b.w;
        dst[i * 4 + 3] = b.h;
    }
    BmxStatus::Ok
}

/// Intersection-over-union of two boxes.
///
/// # Safety
/// `a` and `b` point to 4 doubles each; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn bmx_iou(a: *const f64, b: *const f64, out: *mut f64) -> BmxStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return BmxStatus::NullArgument;
    }
    let (Some(a), Some(b)) = (read_box(a), read_box(b)) else {
        return BmxStatus::InvalidArgument;
    };
    *out = iou(&a, &b);
    BmxStatus::Ok
}

/// Encode `gt` relative to `anchor` into 4 offset components.
///
/// # Safety
/// All pointers reference 4 doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bmx_encode_offsets(
    anchor: *const f64,
    gt: *const f64,
    out: *mut f64,
) -> BmxStatus {
    if anchor.is_null() || gt.is_null() || out.is_null() {
        return BmxStatus::NullArgument;
    }
    let (Some(anchor), Some(gt)) = (read_box(anchor), read_box(gt)) else {
        return BmxStatus::InvalidArgument;
    };
    match encode_offsets(&anchor, &gt) {
        OffsetVector::Defined(v) => {
            std::slice::from_raw_parts_mut(out, 4).copy_from_slice(&v);
            BmxStatus::Ok
        }
        OffsetVector::Undefined => BmxStatus::Internal,
    }
}

/// Invert `bmx_encode_offsets`: reconstruct the box encoded by `offsets`.
///
/// # Safety
/// All pointers reference 4 doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bmx_decode_offsets(
    anchor: *const f64,
    offsets: *const f64,
    out: *mut f64,
) -> BmxStatus {
    if anchor.is_null() || offsets.is_null() || out.is_null() {
        return BmxStatus::NullArgument;
    }
    let Some(anchor) = read_box(anchor) else {
        return BmxStatus::InvalidArgument;
    };
    let off = std::slice::from_raw_parts(offsets, 4);
    match decode_offsets(&anchor, &OffsetVector::Defined([off[0], off[1], off[2], off[3]])) {
        Ok(b) => {
            let dst = std::slice::from_raw_parts_mut(out, 4);
            dst[0] = b.cx;
            dst[1] = b.cy;
            dst[2] = b.w;
            dst[3] = b.h;
            BmxStatus::Ok
        }
        Err(_) => BmxStatus::InvalidArgument,
    }
}

/// Draw `n` mixing weights from Beta(alpha, alpha), deterministic per seed.
///
/// # Safety
/// `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bmx_sample_lambda(
    alpha: f64,
    seed: u64,
    n: usize,
    out: *mut f64,
) -> BmxStatus {
    if out.is_null() {
        return BmxStatus::NullArgument;
    }
    if !(alpha > 0.0) {
        return BmxStatus::InvalidArgument;
    }
    let mut rng = boxmix::rng::stream(seed, "capi-lambda", &[]);
    let dst = std::slice::from_raw_parts_mut(out, n);
    for v in dst {
        match sample_lambda(alpha, &mut rng) {
            Ok(w) => *v = w.lambda,
            Err(_) => return BmxStatus::InvalidArgument,
        }
    }
    BmxStatus::Ok
}

unsafe fn targets_from_raw(
    n_anchors: usize,
    num_classes: usize,
    labels: *const f64,
    offsets: *const f64,
    defined: *const u8,
) -> Option<AnchorTargets> {
    let width = num_classes + 1;
    let labels = std::slice::from_raw_parts(labels, n_anchors * width);
    let offsets = std::slice::from_raw_parts(offsets, n_anchors * 4);
    let defined = std::slice::from_raw_parts(defined, n_anchors);
    let mut t_labels = Vec::with_capacity(n_anchors);
    let mut t_offsets = Vec::with_capacity(n_anchors);
    for a in 0..n_anchors {
        t_labels.push(LabelDistribution::new(labels[a * width..(a + 1) * width].to_vec()).ok()?);
        t_offsets.push(if defined[a] != 0 {
            OffsetVector::Defined([
                offsets[a * 4],
                offsets[a * 4 + 1],
                offsets[a * 4 + 2],
                offsets[a * 4 + 3],
            ])
        } else {
            OffsetVector::Undefined
        });
    }
    Some(AnchorTargets { offsets: t_offsets, labels: t_labels, num_classes })
}

unsafe fn targets_to_raw(
    t: &AnchorTargets,
    labels: *mut f64,
    offsets: *mut f64,
    defined: *mut u8,
) {
    let width = t.num_classes + 1;
    let l = std::slice::from_raw_parts_mut(labels, t.len() * width);
    let o = std::slice::from_raw_parts_mut(offsets, t.len() * 4);
    let d = std::slice::from_raw_parts_mut(defined, t.len());
    for a in 0..t.len() {
        l[a * width..(a + 1) * width].copy_from_slice(t.labels[a].probs());
        match t.offsets[a] {
            OffsetVector::Defined(v) => {
                o[a * 4..a * 4 + 4].copy_from_slice(&v);
                d[a] = 1;
            }
            OffsetVector::Undefined => {
                o[a * 4..a * 4 + 4].copy_from_slice(&[0.0; 4]);
                d[a] = 0;
            }
        }
    }
}

/// Translate `m` labeled boxes into per-anchor targets.
///
/// Inputs: `boxes` is `m * 4` doubles, `classes` is `m` ids in
/// `1..=num_classes`. Outputs (all anchor-major, length = anchor count):
/// `out_labels` rows of `num_classes + 1`, `out_offsets` rows of 4,
/// `out_defined` flags. Buffers must hold exactly those lengths.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn bmx_match_targets(
    set: *const BmxAnchorSet,
    boxes: *const f64,
    classes: *const u32,
    m: usize,
    num_classes: usize,
    tau: f64,
    out_labels: *mut f64,
    out_offsets: *mut f64,
    out_defined: *mut u8,
) -> BmxStatus {
    if set.is_null() || out_labels.is_null() || out_offsets.is_null() || out_defined.is_null() {
        return BmxStatus::NullArgument;
    }
    if m > 0 && (boxes.is_null() || classes.is_null()) {
        return BmxStatus::NullArgument;
    }
    let anchors = &(*set).inner;
    let mut gt = GroundTruth::default();
    for i in 0..m {
        let Some(bbox) = read_box(boxes.add(i * 4)) else {
            return BmxStatus::InvalidArgument;
        };
        gt.boxes.push(LabeledBox { bbox, class_id: *classes.add(i) as usize });
    }
    match match_targets(&gt, anchors, num_classes, tau) {
        Ok(t) => {
            targets_to_raw(&t, out_labels, out_offsets, out_defined);
            BmxStatus::Ok
        }
        Err(_) => BmxStatus::InvalidArgument,
    }
}

/// Blend two target fields: labels interpolate with weight `lambda`, offsets
/// come whole from the first field when `lambda > 1/2` and from the second
/// otherwise. Layouts are as in `bmx_match_targets`; in/out buffers may not
/// alias.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn bmx_box_mix(
    n_anchors: usize,
    num_classes: usize,
    lambda: f64,
    labels_a: *const f64,
    offsets_a: *const f64,
    defined_a: *const u8,
    labels_b: *const f64,
    offsets_b: *const f64,
    defined_b: *const u8,
    out_labels: *mut f64,
    out_offsets: *mut f64,
    out_defined: *mut u8,
) -> BmxStatus {
    if labels_a.is_null()
        || offsets_a.is_null()
        || defined_a.is_null()
        || labels_b.is_null()
        || offsets_b.is_null()
        || defined_b.is_null()
        || out_labels.is_null()
        || out_offsets.is_null()
        || out_defined.is_null()
    {
        return BmxStatus::NullArgument;
    }
    if !(0.0..=1.0).contains(&lambda) {
        return BmxStatus::InvalidArgument;
    }
    let Some(a) = targets_from_raw(n_anchors, num_classes, labels_a, offsets_a, defined_a) else {
        return BmxStatus::InvalidArgument;
    };
    let Some(b) = targets_from_raw(n_anchors, num_classes, labels_b, offsets_b, defined_b) else {
        return BmxStatus::InvalidArgument;
    };
    match box_mix(&a, &b, MixWeight::pinned(lambda)) {
        Ok(t) => {
            targets_to_raw(&t, out_labels, out_offsets, out_defined);
            BmxStatus::Ok
        }
        Err(_) => BmxStatus::InvalidArgument,
    }
}

/// How many anchors of a target field carry object mass (background below
/// an epsilon of full certainty); convenience for binding layers.
///
/// # Safety
/// `labels` must reference `n_anchors * (num_classes + 1)` doubles.
#[no_mangle]
pub unsafe extern "C" fn bmx_count_positives(
    n_anchors: usize,
    num_classes: usize,
    labels: *const f64,
) -> usize {
    if labels.is_null() {
        return 0;
    }
    let width = num_classes + 1;
    let l = std::slice::from_raw_parts(labels, n_anchors * width);
    (0..n_anchors)
        .filter(|a| l[a * width] < 1.0 - POSITIVE_EPS)
        .count()
}

/// Greedy per-class suppression. `boxes` is `n * 4`, `classes` and `scores`
/// are `n` long. Writes the indices of surviving detections (score-sorted)
/// into `keep` (capacity `keep_cap`) and the count into `keep_len`.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn bmx_nms(
    boxes: *const f64,
    classes: *const u32,
    scores: *const f64,
    n: usize,
    iou_threshold: f64,
    top_k: usize,
    keep: *mut usize,
    keep_cap: usize,
    keep_len: *mut usize,
) -> BmxStatus {
    if keep.is_null() || keep_len.is_null() {
        return BmxStatus::NullArgument;
    }
    if n > 0 && (boxes.is_null() || classes.is_null() || scores.is_null()) {
        return BmxStatus::NullArgument;
    }
    let mut dets = Vec::with_capacity(n);
    for i in 0..n {
        let Some(bbox) = read_box(boxes.add(i * 4)) else {
            return BmxStatus::InvalidArgument;
        };
        let score = *scores.add(i);
        if !score.is_finite() {
            return BmxStatus::InvalidArgument;
        }
        dets.push(boxmix::eval::Detection {
            bbox,
            class_id: *classes.add(i) as usize,
            score,
        });
    }
    let Ok(kept) = boxmix::eval::nms_indices(&dets, iou_threshold, top_k) else {
        return BmxStatus::InvalidArgument;
    };
    if kept.len() > keep_cap {
        return BmxStatus::BufferTooSmall;
    }
    std::slice::from_raw_parts_mut(keep, kept.len()).copy_from_slice(&kept);
    *keep_len = kept.len();
    BmxStatus::Ok
}
