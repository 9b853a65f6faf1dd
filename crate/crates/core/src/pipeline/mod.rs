//! End-to-end driver behind the `conceptspace` binary.
//!
//! Stages communicate only through files in the output directory, so each
//! can be rerun on its own and `all` produces the same bytes as the four
//! stages run one by one:
//!
//! | stage      | writes                                                      |
//! |------------|-------------------------------------------------------------|
//! | `discover` | `segments.csv`, `segments.f32`, `clusters_<group>.csv`, `discover.json` |
//! | `score`    | `space_<group>.json`, `space_<group>_basis.f32`, `completeness.csv`, `scores.csv`, `prototypes.json` |
//! | `explain`  | `explain/<image>/{activation,relevance}.f32`, `legend.json`, `overlay.png` |
//! | `bench`    | `curves_<mode>.csv`, `bench.json`, optionally `traces_<mode>.json` |
//!
//! A group is one class (`class<k>`) or, with pooled clustering, every
//! selected class at once (`pooled`).

mod artifacts;
mod config;
mod dataset;
mod stages;
mod synth;

pub use artifacts::{load_space, ClusterRow, CompletenessRow, CurveRow, ScoreRow, SpaceHeader};
pub use config::{ClusterScope, PipelineConfig, SscSettings};
pub use dataset::{load_dataset, load_manifest, DatasetEntry, DatasetManifest, DATASET_FORMAT};
pub use stages::{
    bench, discover, explain, run_all, score, BenchReport, DiscoverReport, ExplainReport,
    GroupClusters, ModeReport, ScoreReport,
};
pub use synth::{write_desk_setup, write_planted_setup};

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::embedding::DatasetItem;
use crate::error::{Error, Result};
use crate::model::{load_model, ModelGraph};

/// Config, model and dataset of one run.
pub struct Context {
    pub config: PipelineConfig,
    pub model: ModelGraph,
    pub manifest: DatasetManifest,
    /// Sorted by image id.
    pub items: Vec<DatasetItem>,
}

impl Context {
    pub fn load(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let model = load_model(&config.model, &config.weights)?;
        let (manifest, items) = load_dataset(&config.dataset, config.min_area_fraction)?;
        let classes = model.num_classes();
        if manifest.class_names.len() > classes {
            return Err(Error::Config(format!(
                "the dataset names {} classes but the model has {classes} outputs",
                manifest.class_names.len()
            )));
        }
        let [c, h, w] = model.input_shape;
        for item in &items {
            let im = &item.image;
            if (im.channels, im.height, im.width) != (c, h, w) {
                return Err(Error::item(
                    "load",
                    &item.image_id,
                    Error::InvalidArgument(format!(
                        "image is {}x{}x{} but the model expects {c}x{h}x{w}",
                        im.channels, im.height, im.width
                    )),
                ));
            }
        }
        if let Some(sel) = &config.classes {
            if let Some(&bad) = sel.iter().find(|&&k| k >= manifest.class_names.len()) {
                return Err(Error::Config(format!("class {bad} is not in the dataset")));
            }
        }
        Ok(Self {
            config,
            model,
            manifest,
            items,
        })
    }

    /// Selected classes that have at least one image, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let present: BTreeSet<usize> = self.items.iter().filter_map(|i| i.class_label).collect();
        match &self.config.classes {
            Some(sel) => sel
                .iter()
                .copied()
                .filter(|c| present.contains(c))
                .collect::<BTreeSet<_>>(),
            None => present,
        }
        .into_iter()
        .collect()
    }

    /// Images of the selected classes, sorted by id.
    pub fn selected_items(&self) -> Vec<&DatasetItem> {
        let classes = self.classes();
        self.items
            .iter()
            .filter(|i| i.class_label.is_some_and(|c| classes.contains(&c)))
            .collect()
    }

    /// `(group tag, classes)` in output order.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        match self.config.scope {
            ClusterScope::PerClass => self
                .classes()
                .into_iter()
                .map(|c| (group_tag(Some(c)), vec![c]))
                .collect(),
            ClusterScope::Pooled => vec![(group_tag(None), self.classes())],
        }
    }

    pub fn group_of(&self, class: usize) -> String {
        match self.config.scope {
            ClusterScope::PerClass => group_tag(Some(class)),
            ClusterScope::Pooled => group_tag(None),
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.manifest.class_names[class]
    }
}

fn group_tag(class: Option<usize>) -> String {
    match class {
        Some(c) => format!("class{c}"),
        None => "pooled".into(),
    }
}
