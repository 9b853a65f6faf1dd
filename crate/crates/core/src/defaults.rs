//! Named default values for every tunable threshold.

/// Masks covering less than this fraction of the image are discarded before
/// the granular decomposition is built.
pub const MIN_AREA_FRACTION: f64 = 0.01;

/// Fraction of squared singular mass a concept basis must capture.
pub const VARIANCE_THRESHOLD: f64 = 0.8;

/// Clusters need strictly more members than this to become concepts.
pub const MIN_CLUSTER_SIZE: usize = 50;

/// Fraction of a class's images a concept must appear in to be flipped.
pub const PRESENCE_THRESHOLD: f64 = 0.75;

/// Layer-masking erodes masks whose area fraction is strictly above this.
pub const SHRINK_AREA_THRESHOLD: f64 = 0.25;

/// Per-column lasso weight relative to `‖Φ₋ᵢᵀφᵢ‖∞`.
pub const LAMBDA_REL: f64 = 0.05;

pub const SSC_MAX_ITER: usize = 5_000;
pub const SSC_TOL: f64 = 1e-7;
pub const KMEANS_RESTARTS: usize = 10;

/// Condition-number cap for the assembled concept basis.
pub const COND_CAP: f64 = 1e6;

pub const PROTOTYPES_TOP_K: usize = 5;
pub const SEED: u64 = 0;
