//! Line-delimited dataset manifest.
//!
//! Format (one header block, then one `item` line per image):
//! ```text
//! # boxmix dataset manifest v1
//! split=train
//! image_size=64
//! classes=circle,square,triangle
//! seed=7
//! count=2
//! item img_00000.ppm 2 1:0.1,0.2,0.35,0.45 3:0.5,0.5,0.9,0.9
//! item img_00001.ppm 0
//! ```
//! Boxes are corner-form `class:x1,y1,x2,y2` in normalized coordinates,
//! printed with Rust's shortest round-trip float formatting so a rewrite of
//! parsed data is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matching::{GroundTruth, LabeledBox};

pub const MANIFEST_HEADER: &str = "# boxmix dataset manifest v1";

/// One annotated image. Boxes are held as the literal corner tuples from the
/// file so that parse/print round trips are byte-exact; convert through
/// [`ManifestItem::ground_truth`] to work with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub file: String,
    pub boxes: Vec<(usize, [f64; 4])>,
}

impl ManifestItem {
    pub fn from_ground_truth(file: String, gt: &GroundTruth) -> Self {
        let boxes = gt
            .boxes
            .iter()
            .map(|b| {
                let (x1, y1, x2, y2) = b.bbox.corners();
                (b.class_id, [x1, y1, x2, y2])
            })
            .collect();
        ManifestItem { file, boxes }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(
            self.boxes
                .iter()
                .map(|(class_id, c)| LabeledBox {
                    bbox: BBox::from_corners(c[0], c[1], c[2], c[3])
                        .expect("manifest boxes are validated on construction"),
                    class_id: *class_id,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub image_size: usize,
    pub classes: Vec<String>,
    pub seed: u64,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "image_size={}", self.image_size);
        let _ = writeln!(out, "classes={}", self.classes.join(","));
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "count={}", self.items.len());
        for item in &self.items {
            let _ = write!(out, "item {} {}", item.file, item.boxes.len());
            for (class_id, c) in &item.boxes {
                let _ = write!(out, " {}:{},{},{},{}", class_id, c[0], c[1], c[2], c[3]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != MANIFEST_HEADER {
            return Err(Error::Format(format!("unknown manifest header `{header}`")));
        }
        let mut split = None;
        let mut image_size = None;
        let mut classes: Option<Vec<String>> = None;
        let mut seed = None;
        let mut count = None;
        let mut items = Vec::new();
        for line in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("item ") {
                let mut fields = rest.split(' ');
                let file = fields
                    .next()
                    .ok_or_else(|| Error::Format("item line without a file".into()))?
                    .to_string();
                let n: usize = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::Format("item line without a box count".into()))?;
                let mut boxes = Vec::with_capacity(n);
                for f in fields {
                    let (class_part, coord_part) = f
                        .split_once(':')
                        .ok_or_else(|| Error::Format(format!("bad box field `{f}`")))?;
                    let class_id: usize = class_part
                        .parse()
                        .map_err(|_| Error::Format(format!("bad class id `{class_part}`")))?;
                    let coords: Vec<f64> = coord_part
                        .split(',')
                        .map(|c| c.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Format(format!("bad coordinates `{coord_part}`")))?;
                    if coords.len() != 4 {
                        return Err(Error::Format(format!("expected 4 coordinates in `{f}`")));
                    }
                    // reject degenerate boxes up front
                    BBox::from_corners(coords[0], coords[1], coords[2], coords[3])
                        .map_err(|e| Error::Format(format!("degenerate box `{f}`: {e}")))?;
                    boxes.push((class_id, [coords[0], coords[1], coords[2], coords[3]]));
                }
                if boxes.len() != n {
                    return Err(Error::Format(format!(
                        "item `{file}` declares {n} boxes but lists {}",
                        boxes.len()
                    )));
                }
                items.push(ManifestItem { file, boxes });
            } else if let Some((key, value)) = line.split_once('=') {
                match key {
                    "split" => split = Some(value.to_string()),
                    "image_size" => {
                        image_size = Some(value.parse().map_err(|_| {
                            Error::Format(format!("bad image_size `{value}`"))
                        })?)
                    }
                    "classes" => {
                        classes = Some(value.split(',').map(|s| s.to_string()).collect())
                    }
                    "seed" => {
                        seed = Some(
                            value
                                .parse()
                                .map_err(|_| Error::Format(format!("bad seed `{value}`")))?,
                        )
                    }
                    "count" => {
                        count = Some(
                            value
                                .parse::<usize>()
                                .map_err(|_| Error::Format(format!("bad count `{value}`")))?,
                        )
                    }
                    _ => return Err(Error::Format(format!("unknown manifest key `{key}`"))),
                }
            } else {
                return Err(Error::Format(format!("unparseable manifest line `{line}`")));
            }
        }
        let manifest = DatasetManifest {
            split: split.ok_or_else(|| Error::Format("manifest lacks split".into()))?,
            image_size: image_size.ok_or_else(|| Error::Format("manifest lacks image_size".into()))?,
            classes: classes.ok_or_else(|| Error::Format("manifest lacks classes".into()))?,
            seed: seed.ok_or_else(|| Error::Format("manifest lacks seed".into()))?,
            items,
        };
        if let Some(c) = count {
            if c != manifest.items.len() {
                return Err(Error::Format(format!(
                    "manifest declares {c} items but lists {}",
                    manifest.items.len()
                )));
            }
        }
        for item in &manifest.items {
            for (class_id, c) in &item.boxes {
                if c[0] < -1e-9 || c[1] < -1e-9 || c[2] > 1.0 + 1e-9 || c[3] > 1.0 + 1e-9 {
                    return Err(Error::Format(format!(
                        "box outside the unit square in `{}`",
                        item.file
                    )));
                }
                if *class_id == 0 || *class_id > manifest.classes.len() {
                    return Err(Error::Format(format!(
                        "class id {class_id} out of range in `{}`",
                        item.file
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Directory layout: `<root>/<split>/images/*.ppm` with the manifest at
    /// `<root>/<split>/manifest.txt`.
    pub fn split_dir(root: &Path, split: &str) -> PathBuf {
        root.join(split)
    }

    pub fn image_path(root: &Path, split: &str, file: &str) -> PathBuf {
        root.join(split).join("images").join(file)
    }

    /// Check that every referenced image file exists.
    pub fn verify_files(&self, root: &Path) -> Result<()> {
        for item in &self.items {
            let p = Self::image_path(root, &self.split, &item.file);
            if !p.is_file() {
                return Err(Error::Format(format!("missing image file {}", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetManifest {
        let gt = GroundTruth::new(vec![LabeledBox {
            bbox: BBox::new(0.3, 0.4, 0.2, 0.25).unwrap(),
            class_id: 2,
        }]);
        DatasetManifest {
            split: "train".into(),
            image_size: 64,
            classes: vec!["circle".into(), "square".into(), "triangle".into()],
            seed: 7,
            items: vec![
                ManifestItem::from_ground_truth("img_00000.ppm".into(), &gt),
                ManifestItem { file: "img_00001.ppm".into(), boxes: vec![] },
            ],
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = sample();
        let text = m.to_text();
        let back = DatasetManifest::from_text(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.to_text(), text);
        // conversion to working form is well defined
        let gt = back.items[0].ground_truth();
        assert_eq!(gt.boxes[0].class_id, 2);
        assert_eq!(back.items[1].ground_truth(), GroundTruth::default());
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        assert!(DatasetManifest::from_text("garbage").is_err());
        let text = sample().to_text().replace("count=2", "count=5");
        assert!(DatasetManifest::from_text(&text).is_err());
        let text = sample().to_text().replace("2:", "9:");
        assert!(DatasetManifest::from_text(&text).is_err());
    }
}
