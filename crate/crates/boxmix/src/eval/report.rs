//! On-disk evaluation reports: a versioned JSON document plus per-table CSV
//! files for plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coco::CocoMetrics;
use super::map::VocMapResult;
use super::patch::PatchMetrics;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Identity of the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub config_digest: String,
    pub seed: u64,
    /// Unix seconds. Honors `SOURCE_DATE_EPOCH` so reruns can be compared
    /// byte for byte.
    pub timestamp: u64,
}

impl ReportMeta {
    pub fn new(config_digest: &str, seed: u64) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        ReportMeta {
            schema_version: REPORT_SCHEMA_VERSION,
            config_digest: config_digest.to_string(),
            seed,
            timestamp,
        }
    }
}

/// Accuracy under additive noise, one row per noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub rows: Vec<NoiseRow>,
}

/// Patch study summary at one overlap threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTable {
    pub iou_thr: f64,
    pub copies: usize,
    pub metrics: PatchMetrics,
}

/// One grouped variance-concentration measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatteningRow {
    /// 0 stands for the merged all-classes group.
    pub class_id: usize,
    pub level: usize,
    pub n_images: usize,
    pub ratio_a: f64,
    pub ratio_b: f64,
    pub difference: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatteningTable {
    pub rows: Vec<FlatteningRow>,
}

/// Everything one evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub voc: Option<VocMapResult>,
    pub coco: Option<CocoMetrics>,
    pub noise: Option<NoiseTable>,
    pub patch: Option<Vec<PatchTable>>,
    pub flattening: Option<FlatteningTable>,
}

impl EvalReport {
    pub fn new(meta: ReportMeta) -> Self {
        EvalReport { meta, voc: None, coco: None, noise: None, patch: None, flattening: None }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad report: {e}")))
    }
}

/// Write one CSV table; fields are formatted with Rust's shortest-round-trip
/// float notation so identical data produces identical bytes.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
