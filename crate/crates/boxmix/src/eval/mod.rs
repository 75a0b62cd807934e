//! Inference post-processing and the metric suite.

pub mod coco;
pub mod map;
pub mod patch;
pub mod pca;
pub mod postprocess;
pub mod report;

pub use coco::{coco_ap, CocoMetrics};
pub use map::{ap_from_matches, voc_map, ApStyle, ClassAp, VocMapResult};
pub use patch::{average_patch_metrics, patch_metrics, PatchMetrics};
pub use pca::{pca_first_component_ratio, PcaRatio};
pub use postprocess::{decode_predictions, nms, nms_indices, Detection};
pub use report::{
    write_csv, EvalReport, FlatteningRow, FlatteningTable, NoiseRow, NoiseTable, PatchTable,
    ReportMeta, REPORT_SCHEMA_VERSION,
};
