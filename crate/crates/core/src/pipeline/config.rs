use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::io::read_json;
use crate::model::MaskingMode;
use crate::subspace_clustering::{LassoMethod, SscConfig};

/// Whether concepts are discovered per class or once for all classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterScope {
    #[default]
    PerClass,
    Pooled,
}

/// Self-expression settings; the seed comes from [`PipelineConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SscSettings {
    pub lambda_rel: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub solver: LassoMethod,
}

impl Default for SscSettings {
    fn default() -> Self {
        let d = SscConfig::default();
        Self {
            lambda_rel: d.lambda_rel,
            max_iter: d.max_iter,
            tol: d.tol,
            restarts: d.restarts,
            solver: d.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Model manifest; relative paths resolve against the config file.
    pub model: PathBuf,
    /// Weight blob of the model.
    pub weights: PathBuf,
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: MaskingMode,
    /// Modes benchmarked by `bench`; empty means `[mode]`.
    #[serde(default)]
    pub bench_modes: Vec<MaskingMode>,
    #[serde(default)]
    pub ssc: SscSettings,
    #[serde(default)]
    pub scope: ClusterScope,
    #[serde(default = "default_var_threshold")]
    pub var_threshold: f64,
    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    #[serde(default = "default_min_area_fraction")]
    pub min_area_fraction: f64,
    #[serde(default = "default_presence_threshold")]
    pub presence_threshold: f64,
    /// Fit concept bases on mean-centered members.
    #[serde(default)]
    pub centered: bool,
    #[serde(default = "default_cond_cap")]
    pub cond_cap: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Classes to process; `None` means every class with images.
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
    /// Images explained by `all`; empty means the first image of each class.
    #[serde(default)]
    pub explain_images: Vec<String>,
    /// Also write per-image flip traces.
    #[serde(default)]
    pub per_image_detail: bool,
}

fn default_mode() -> MaskingMode {
    MaskingMode::LayerMasking
}
fn default_var_threshold() -> f64 {
    defaults::VARIANCE_THRESHOLD
}
fn default_min_cluster_size() -> usize {
    defaults::MIN_CLUSTER_SIZE
}
fn default_min_area_fraction() -> f64 {
    defaults::MIN_AREA_FRACTION
}
fn default_presence_threshold() -> f64 {
    defaults::PRESENCE_THRESHOLD
}
fn default_cond_cap() -> f64 {
    defaults::COND_CAP
}
fn default_top_k() -> usize {
    defaults::PROTOTYPES_TOP_K
}
fn default_parallelism() -> usize {
    1
}

impl PipelineConfig {
    /// A config with every knob at its default.
    pub fn new(model: PathBuf, weights: PathBuf, dataset: PathBuf, output: PathBuf) -> Self {
        Self {
            model,
            weights,
            dataset,
            output,
            mode: default_mode(),
            bench_modes: Vec::new(),
            ssc: SscSettings::default(),
            scope: ClusterScope::default(),
            var_threshold: default_var_threshold(),
            min_cluster_size: default_min_cluster_size(),
            min_area_fraction: default_min_area_fraction(),
            presence_threshold: default_presence_threshold(),
            centered: false,
            cond_cap: default_cond_cap(),
            top_k: default_top_k(),
            seed: defaults::SEED,
            parallelism: default_parallelism(),
            classes: None,
            explain_images: Vec::new(),
            per_image_detail: false,
        }
    }

    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = read_json(path).map_err(|e| match e {
            Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.model,
            &mut cfg.weights,
            &mut cfg.dataset,
            &mut cfg.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.var_threshold > 0.0 && self.var_threshold <= 1.0) {
            return bad(format!(
                "var_threshold must lie in (0, 1], got {}",
                self.var_threshold
            ));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return bad(format!(
                "min_area_fraction must lie in [0, 1), got {}",
                self.min_area_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.presence_threshold) {
            return bad(format!(
                "presence_threshold must lie in [0, 1], got {}",
                self.presence_threshold
            ));
        }
        if !(self.cond_cap >= 1.0) {
            return bad(format!(
                "cond_cap must be at least 1, got {}",
                self.cond_cap
            ));
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if let Some(c) = &self.classes {
            if c.is_empty() {
                return bad("classes must not be empty when given".into());
            }
        }
        self.ssc_config().validate()
    }

    pub fn ssc_config(&self) -> SscConfig {
        SscConfig {
            lambda_rel: self.ssc.lambda_rel,
            max_iter: self.ssc.max_iter,
            tol: self.ssc.tol,
            seed: self.seed,
            restarts: self.ssc.restarts,
            solver: self.ssc.solver,
        }
    }

    pub fn bench_modes(&self) -> Vec<MaskingMode> {
        if self.bench_modes.is_empty() {
            vec![self.mode]
        } else {
            self.bench_modes.clone()
        }
    }
}
