use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// Variants are grouped so that the CLI can map them onto its exit codes:
/// configuration problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{op} did not converge on a {rows}x{cols} matrix")]
    NonConvergence {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("lasso did not converge: KKT residual {residual:.3e} after {iterations} iterations")]
    LassoConvergence { residual: f64, iterations: usize },

    #[error("self-expression of column {column} failed: {source}")]
    SelfExpression {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model load failed{}: {reason}", layer_suffix(*.layer))]
    ModelLoad {
        layer: Option<usize>,
        reason: String,
    },

    #[error("mask data error: {0}")]
    MaskFormat(String),

    #[error("degenerate cluster {cluster}: {reason}")]
    DegenerateCluster { cluster: usize, reason: String },

    #[error("concept directions exceed the feature dimension: {requested} directions over {concepts} concepts in R^{dim}")]
    DimensionOverflow {
        requested: usize,
        concepts: usize,
        dim: usize,
    },

    #[error("every cluster has at most {min_size} members; no concepts remain")]
    EmptyConceptSet { min_size: usize },

    #[error("no concept is present in at least {threshold} of the images; try a lower presence threshold")]
    NoCommonConcepts { threshold: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{stage} failed for {item}: {source}")]
    Item {
        stage: &'static str,
        item: String,
        #[source]
        source: Box<Error>,
    },
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(i) => format!(" at layer {i}"),
        None => String::new(),
    }
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::NonConvergence { .. }
            | Error::LassoConvergence { .. }
            | Error::SelfExpression { .. }
            | Error::DegenerateCluster { .. }
            | Error::DimensionOverflow { .. } => ErrorKind::Numeric,
            Error::Item { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn item(stage: &'static str, item: impl Into<String>, source: Error) -> Self {
        Error::Item {
            stage,
            item: item.into(),
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
