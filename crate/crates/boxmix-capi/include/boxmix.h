#ifndef BOXMIX_H
#define BOXMIX_H

/* Generated by cbindgen from the boxmix-capi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call result. Everything except `Ok` leaves output buffers untouched.
typedef enum BmxStatus {
  BmxStatus_Ok = 0,
  BmxStatus_NullArgument = 1,
  BmxStatus_InvalidArgument = 2,
  BmxStatus_BufferTooSmall = 3,
  BmxStatus_Internal = 4,
} BmxStatus;

// Opaque anchor tiling.
typedef struct BmxAnchorSet BmxAnchorSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *bmx_version(void);

// Parse a compact tiling description (`grid:scale:ratios;...`) into a handle.
//
// # Safety
// `spec` must be a nul-terminated string and `out` a valid pointer.
enum BmxStatus bmx_anchor_set_parse(const char *spec, struct BmxAnchorSet **out);

// Release a handle returned by `bmx_anchor_set_parse`. Null is a no-op.
//
// # Safety
// `set` must come from `bmx_anchor_set_parse` and not be freed twice.
void bmx_anchor_set_free(struct BmxAnchorSet *set);

// Number of anchors in the tiling; 0 for a null handle.
//
// # Safety
// `set` must be a live handle or null.
size_t bmx_anchor_set_len(const struct BmxAnchorSet *set);

// Copy every anchor as `(cx, cy, w, h)` into `out` (capacity `cap` doubles).
//
// # Safety
// `out` must point to at least `cap` writable doubles.
enum BmxStatus bmx_anchor_set_boxes(const struct BmxAnchorSet *set, double *out, size_t cap);

// Intersection-over-union of two boxes.
//
// # Safety
// `a` and `b` point to 4 doubles each; `out` to one writable double.
enum BmxStatus bmx_iou(const double *a, const double *b, double *out);

// Encode `gt` relative to `anchor` into 4 offset components.
//
// # Safety
// All pointers reference 4 doubles; `out` is writable.
enum BmxStatus bmx_encode_offsets(const double *anchor, const double *gt, double *out);

// Invert `bmx_encode_offsets`: reconstruct the box encoded by `offsets`.
//
// # Safety
// All pointers reference 4 doubles; `out` is writable.
enum BmxStatus bmx_decode_offsets(const double *anchor, const double *offsets, double *out);

// Draw `n` mixing weights from Beta(alpha, alpha), deterministic per seed.
//
// # Safety
// `out` must point to `n` writable doubles.
enum BmxStatus bmx_sample_lambda(double alpha, uint64_t seed, size_t n, double *out);

// Translate `m` labeled boxes into per-anchor targets.
//
// Inputs: `boxes` is `m * 4` doubles, `classes` is `m` ids in
// `1..=num_classes`. Outputs (all anchor-major, length = anchor count):
// `out_labels` rows of `num_classes + 1`, `out_offsets` rows of 4,
// `out_defined` flags. Buffers must hold exactly those lengths.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum BmxStatus bmx_match_targets(const struct BmxAnchorSet *set,
                                 const double *boxes,
                                 const uint32_t *classes,
                                 size_t m,
                                 size_t num_classes,
                                 double tau,
                                 double *out_labels,
                                 double *out_offsets,
                                 uint8_t *out_defined);

// Blend two target fields: labels interpolate with weight `lambda`, offsets
// come whole from the first field when `lambda > 1/2` and from the second
// otherwise. Layouts are as in `bmx_match_targets`; in/out buffers may not
// alias.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum BmxStatus bmx_box_mix(size_t n_anchors,
                           size_t num_classes,
                           double lambda,
                           const double *labels_a,
                           const double *offsets_a,
                           const uint8_t *defined_a,
                           const double *labels_b,
                           const double *offsets_b,
                           const uint8_t *defined_b,
                           double *out_labels,
                           double *out_offsets,
                           uint8_t *out_defined);

// How many anchors of a target field carry object mass (background below
// an epsilon of full certainty); convenience for binding layers.
//
// # Safety
// `labels` must reference `n_anchors * (num_classes + 1)` doubles.
size_t bmx_count_positives(size_t n_anchors, size_t num_classes, const double *labels);

// Greedy per-class suppression. `boxes` is `n * 4`, `classes` and `scores`
// are `n` long. Writes the indices of surviving detections (score-sorted)
// into `keep` (capacity `keep_cap`) and the count into `keep_len`.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum BmxStatus bmx_nms(const double *boxes,
                       const uint32_t *classes,
                       const double *scores,
                       size_t n,
                       double iou_threshold,
                       size_t top_k,
                       size_t *keep,
                       size_t keep_cap,
                       size_t *keep_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOXMIX_H */
