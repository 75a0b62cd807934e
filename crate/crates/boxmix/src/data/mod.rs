//! Synthetic dataset generation, storage and corruption transforms.

pub mod corrupt;
pub mod manifest;
pub mod ppm;
pub mod scene;

use std::path::Path;

use crate::error::Result;
use crate::image::ImageTensor;
use crate::invalid_arg;

pub use corrupt::{
    add_gaussian_noise, render_patch, render_patch_bank, transplant_patch, Patch, PatchEntry,
};
pub use manifest::{DatasetManifest, ManifestItem};
pub use ppm::{read_ppm, write_ppm};
pub use scene::{render_item, render_scene, SceneSpec, ShapeKind};

/// Generate `n` scenes under `root/<split>/` and write the manifest.
/// Fully deterministic: the same spec and count produce identical bytes.
pub fn generate_dataset(
    spec: &SceneSpec,
    n: usize,
    root: &Path,
    split: &str,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(invalid_arg!("cannot generate an empty dataset"));
    }
    spec.validate()?;
    let anchors = scene::build_placement_anchors(spec)?;
    let split_dir = DatasetManifest::split_dir(root, split);
    let image_dir = split_dir.join("images");
    std::fs::create_dir_all(&image_dir)?;

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let (image, gt) = render_item(spec, &anchors, i as u64);
        let file = format!("img_{i:05}.ppm");
        write_ppm(&image_dir.join(&file), &image)?;
        items.push(ManifestItem::from_ground_truth(file, &gt));
    }
    let manifest = DatasetManifest {
        split: split.to_string(),
        image_size: spec.image_size,
        classes: spec.classes.clone(),
        seed: spec.seed,
        items,
    };
    manifest.write(&split_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// An in-memory split: quantized images alongside their annotations.
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageTensor>,
}

/// Read every image of a split into memory.
pub fn load_dataset(root: &Path, split: &str) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::read(&DatasetManifest::split_dir(root, split).join("manifest.txt"))?;
    manifest.verify_files(root)?;
    let mut images = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        images.push(read_ppm(&DatasetManifest::image_path(root, split, &item.file))?);
    }
    Ok(LoadedDataset { manifest, images })
}
