use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::dataset::{DatasetEntry, DatasetManifest, DATASET_FORMAT};
use crate::error::Result;
use crate::io::{save_image, write_json};
use crate::model::{save_model, MaskingMode, ModelGraph};
use crate::segment_ingest::{save_masks, MaskSet, SegmentMask};
use crate::synthetic::{desk_dataset, desk_model, planted_flip_setup, DESK_CLASSES};
use crate::tensor::Planes;

/// Members a desk cluster needs to be kept.
const DESK_MIN_CLUSTER: usize = 20;

struct Sample {
    id: String,
    class: usize,
    image: Planes,
    masks: MaskSet,
}

/// Writes images, masks, dataset manifest, model files and `config.json`
/// into `dir`; returns the config path.
fn write_setup(
    dir: &Path,
    class_names: &[&str],
    model: &ModelGraph,
    samples: &[Sample],
    tune: impl FnOnce(&mut PipelineConfig),
) -> Result<PathBuf> {
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        let image = PathBuf::from("images").join(format!("{}.f32", s.id));
        let masks = PathBuf::from("masks").join(format!("{}.json", s.id));
        save_image(&dir.join(&image), &s.image)?;
        save_masks(&dir.join(&masks), &s.masks)?;
        images.push(DatasetEntry {
            id: s.id.clone(),
            class: s.class,
            image,
            masks,
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        images,
    };
    write_json(&dir.join("dataset.json"), &manifest)?;
    save_model(model, &dir.join("model.json"), &dir.join("model.bin"))?;
    let mut config = PipelineConfig::new(
        "model.json".into(),
        "model.bin".into(),
        "dataset.json".into(),
        "out".into(),
    );
    tune(&mut config);
    let path = dir.join("config.json");
    write_json(&path, &config)?;
    Ok(path)
}

/// The synthetic desk task: red disks against blue squares on gray, with its
/// hand-built classifier.
pub fn write_desk_setup(dir: &Path, images_per_class: usize, seed: u64) -> Result<PathBuf> {
    let samples: Vec<Sample> = desk_dataset(images_per_class, seed)
        .into_iter()
        .map(|s| Sample {
            id: s.image_id,
            class: s.class,
            image: s.image,
            masks: s.masks,
        })
        .collect();
    write_setup(dir, &DESK_CLASSES, &desk_model(seed), &samples, |c| {
        c.seed = seed;
        c.min_cluster_size = DESK_MIN_CLUSTER;
    })
}

/// A planted problem with `n_concepts` strip concepts; every concept is its
/// own segment, so the masks are the strips. The background strip has no
/// mask.
pub fn write_planted_setup(
    dir: &Path,
    n_concepts: usize,
    n_images: usize,
    seed: u64,
) -> Result<PathBuf> {
    let setup = planted_flip_setup(n_concepts, n_images, seed)?;
    let samples: Vec<Sample> = setup
        .items
        .into_iter()
        .map(|item| {
            let map = &item.label_map;
            let masks = (1..=n_concepts as u32)
                .map(|id| SegmentMask::new(id, map.segment_mask(id)))
                .collect();
            Sample {
                masks: MaskSet {
                    image_id: item.image_id.clone(),
                    height: map.height,
                    width: map.width,
                    masks,
                },
                id: item.image_id,
                class: 0,
                image: item.image,
            }
        })
        .collect();
    write_setup(
        dir,
        &["planted", "below_threshold"],
        &setup.model,
        &samples,
        |c| {
            c.seed = seed;
            c.mode = MaskingMode::InpaintOriginalScale;
            c.min_cluster_size = 1;
        },
    )
}
