use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::DatasetItem;
use crate::error::{Error, Result};
use crate::io::{load_image, read_json};
use crate::segment_ingest::{load_masks_for, select_granular};

pub const DATASET_FORMAT: &str = "conceptspace-dataset";

/// Dataset manifest: one entry per image, paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub class_names: Vec<String>,
    pub images: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub class: usize,
    /// Raw f32 image with a JSON header next to it.
    pub image: PathBuf,
    /// RLE-JSON mask file or 16-bit PNG label map.
    pub masks: PathBuf,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(path)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Config(format!(
            "{}: format is {:?}, expected {DATASET_FORMAT:?}",
            path.display(),
            m.format
        )));
    }
    let mut seen = BTreeSet::new();
    for e in &m.images {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Config(format!(
                "{}: duplicate image id {:?}",
                path.display(),
                e.id
            )));
        }
        if e.class >= m.class_names.len() {
            return Err(Error::Config(format!(
                "{}: image {} has class {} but only {} classes are named",
                path.display(),
                e.id,
                e.class,
                m.class_names.len()
            )));
        }
    }
    Ok(m)
}

/// Loads images and masks, reduces every mask set to its granular label map,
/// and returns the items sorted by image id.
pub fn load_dataset(
    path: &Path,
    min_area_fraction: f64,
) -> Result<(DatasetManifest, Vec<DatasetItem>)> {
    let manifest = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries: Vec<&DatasetEntry> = manifest.images.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let items = entries
        .into_iter()
        .map(|e| {
            let load = || -> Result<DatasetItem> {
                let image = load_image(&base.join(&e.image))?;
                let masks = load_masks_for(&base.join(&e.masks), &e.id)?;
                if (masks.height, masks.width) != (image.height, image.width) {
                    return Err(Error::MaskFormat(format!(
                        "masks are {}x{} but the image is {}x{}",
                        masks.height, masks.width, image.height, image.width
                    )));
                }
                Ok(DatasetItem {
                    image_id: e.id.clone(),
                    class_label: Some(e.class),
                    image,
                    label_map: select_granular(&masks, min_area_fraction)?,
                })
            };
            load().map_err(|err| Error::item("load", &e.id, err))
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!(
            "{}: dataset has no images",
            path.display()
        )));
    }
    Ok((manifest, items))
}
