//! Sparse subspace clustering: lasso self-expression, a symmetric affinity,
//! and normalized spectral clustering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::numerics::{
    eig_symmetric, kmeans, CoordinateDescent, Homotopy, LassoSolution, LassoSolver, Matrix, Vector,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LassoMethod {
    /// Fixed-penalty ADMM; `max_iter` counts ADMM iterations.
    Admm,
    /// Cyclic coordinate descent; `max_iter` counts passes.
    CoordinateDescent,
    /// Exact solution path; `max_iter` counts path segments plus polishing
    /// passes.
    #[default]
    Homotopy,
}

enum Solver {
    Admm(LassoSolver),
    Cd(CoordinateDescent),
    Path(Homotopy),
}

impl Solver {
    fn solve_excluding(
        &self,
        y: &Vector,
        lambda: f64,
        cfg: &SscConfig,
        i: usize,
    ) -> Result<LassoSolution> {
        match self {
            Solver::Admm(s) => s.solve_excluding(y, lambda, cfg.max_iter, cfg.tol, i),
            Solver::Cd(s) => s.solve_excluding(y, lambda, cfg.max_iter, cfg.tol, i),
            Solver::Path(s) => s.solve_excluding(y, lambda, cfg.max_iter, cfg.tol, i),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SscConfig {
    /// Lasso weight relative to `‖Φ₋ᵢᵀφᵢ‖∞`, in `(0, 1]`.
    pub lambda_rel: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    #[serde(default)]
    pub solver: LassoMethod,
}

impl Default for SscConfig {
    fn default() -> Self {
        Self {
            lambda_rel: defaults::LAMBDA_REL,
            max_iter: defaults::SSC_MAX_ITER,
            tol: defaults::SSC_TOL,
            seed: defaults::SEED,
            restarts: defaults::KMEANS_RESTARTS,
            solver: LassoMethod::default(),
        }
    }
}

impl SscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rel > 0.0 && self.lambda_rel <= 1.0) {
            return Err(Error::Config(format!(
                "lambda_rel must lie in (0, 1], got {}",
                self.lambda_rel
            )));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) || self.restarts == 0 {
            return Err(Error::Config(
                "max_iter, tol and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Self-expression matrix `C` (n × n) of the rows of `phi` (n × D).
///
/// Rows are ℓ₂-normalized first. Column `i` is the lasso solution expressing
/// row `i` through all other rows with `λᵢ = lambda_rel·‖Φ₋ᵢᵀφᵢ‖∞`; the
/// diagonal is exactly zero. A row that is zero, or orthogonal to every other
/// row, gets a zero column.
pub fn ssc_self_expression(phi: &Matrix, cfg: &SscConfig) -> Result<Matrix> {
    cfg.validate()?;
    let (n, dim) = phi.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "self-expression needs at least 2 points, got {n}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("points have zero dimension".into()));
    }
    crate::numerics::ensure_finite(phi, "self-expression input")?;

    // Dictionary atoms are the normalized points, one per column.
    let mut atoms = phi.transpose();
    for mut col in atoms.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let solver = match cfg.solver {
        LassoMethod::Admm => Solver::Admm(LassoSolver::new(&atoms)?),
        LassoMethod::CoordinateDescent => Solver::Cd(CoordinateDescent::new(&atoms)?),
        LassoMethod::Homotopy => Solver::Path(Homotopy::new(&atoms)?),
    };
    let columns: Vec<Result<Vector>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y: Vector = atoms.column(i).into_owned();
            let mut correlation = atoms.tr_mul(&y);
            correlation[i] = 0.0;
            let scale = correlation.amax();
            if scale == 0.0 {
                return Ok(Vector::zeros(n));
            }
            solver
                .solve_excluding(&y, cfg.lambda_rel * scale, cfg, i)
                .map(|s| s.coefficients)
                .map_err(|e| Error::SelfExpression {
                    column: i,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut c = Matrix::zeros(n, n);
    for (i, col) in columns.into_iter().enumerate() {
        let mut col = col?;
        col[i] = 0.0;
        c.set_column(i, &col);
    }
    Ok(c)
}

/// `W = |C| + |C|ᵀ`
pub fn build_affinity(c: &Matrix) -> Result<Matrix> {
    if !c.is_square() {
        return Err(Error::InvalidArgument(format!(
            "affinity needs a square matrix, got {:?}",
            c.shape()
        )));
    }
    let a = c.abs();
    let mut w = &a + a.transpose();
    w.fill_diagonal(0.0);
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralClustering {
    pub labels: Vec<usize>,
    /// Rows with zero degree; labelled by the nearest centroid.
    pub isolated: Vec<usize>,
    /// Row-normalized spectral embedding (n × k); isolated rows are zero.
    pub embedding: Matrix,
}

/// Rows of the `k` eigenvectors of `L_sym = I − D^{-1/2} W D^{-1/2}` with the
/// smallest eigenvalues, each row scaled to unit length.
pub fn spectral_embedding(w: &Matrix, k: usize) -> Result<(Matrix, Vec<usize>)> {
    let n = w.nrows();
    if !w.is_square() || n == 0 {
        return Err(Error::InvalidArgument(
            "affinity must be a non-empty square matrix".into(),
        ));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot embed {n} nodes into {k} dimensions"
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "affinity must be finite and non-negative".into(),
        ));
    }
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let isolated: Vec<usize> = (0..n).filter(|&i| degree[i] == 0.0).collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut lap = Matrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lap[(i, j)] -= inv_sqrt[i] * w[(i, j)] * inv_sqrt[j];
        }
    }
    // Exact symmetry for the eigensolver's contract.
    let lap = (&lap + lap.transpose()) * 0.5;
    let spectrum = eig_symmetric(&lap)?;
    let mut emb = Matrix::zeros(n, k);
    for j in 0..k {
        emb.set_column(j, &spectrum.eigenvectors.column(n - 1 - j));
    }
    for i in 0..n {
        let norm = emb.row(i).norm();
        if isolated.contains(&i) || norm == 0.0 {
            emb.row_mut(i).fill(0.0);
        } else {
            emb.row_mut(i).unscale_mut(norm);
        }
    }
    Ok((emb, isolated))
}

/// Normalized spectral clustering into `k ≥ 2` groups.
pub fn spectral_cluster(
    w: &Matrix,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<SpectralClustering> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "spectral clustering needs k ≥ 2, got {k}"
        )));
    }
    let n = w.nrows();
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let (embedding, isolated) = spectral_embedding(w, k)?;
    let connected: Vec<usize> = (0..n).filter(|i| !isolated.contains(i)).collect();
    if connected.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} of {n} points have neighbours; cannot form {k} clusters",
            connected.len()
        )));
    }
    let points = Matrix::from_fn(connected.len(), k, |r, c| embedding[(connected[r], c)]);
    let km = kmeans(&points, k, seed, restarts)?;
    let mut labels = vec![0; n];
    for (r, &i) in connected.iter().enumerate() {
        labels[i] = km.labels[r];
    }
    for &i in &isolated {
        let row = embedding.row(i);
        let mut best = (f64::INFINITY, 0);
        for c in 0..k {
            let d = (row - km.centroids.row(c)).norm_squared();
            if d < best.0 {
                best = (d, c);
            }
        }
        labels[i] = best.1;
    }
    Ok(SpectralClustering {
        labels,
        isolated,
        embedding,
    })
}

/// `round_half_up(mean)` clamped to `[2, n − 1]`.
pub fn choose_cluster_count(mean_segments_per_image: f64, n: usize) -> Result<usize> {
    if !(mean_segments_per_image > 0.0) || !mean_segments_per_image.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mean segment count must be positive, got {mean_segments_per_image}"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 points to cluster, got {n}"
        )));
    }
    let k = (mean_segments_per_image + 0.5).floor() as usize;
    Ok(k.clamp(2, n - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Retained cluster of every row, `None` for the residual pool.
    pub labels: Vec<Option<usize>>,
    /// Number of retained clusters.
    pub k: usize,
    /// Member count of each retained cluster.
    pub counts: Vec<usize>,
    /// Original cluster id of each retained cluster.
    pub source_clusters: Vec<usize>,
    pub residual_pool: Vec<usize>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == Some(cluster))
            .collect()
    }
}

/// Keeps clusters with more than `min_size` members, renumbered densely in
/// original order; the other rows go to the residual pool.
pub fn filter_clusters(labels: &[usize], min_size: usize) -> Result<ClusterAssignment> {
    let k_in = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k_in];
    for &l in labels {
        sizes[l] += 1;
    }
    let source_clusters: Vec<usize> = (0..k_in).filter(|&c| sizes[c] > min_size).collect();
    if source_clusters.is_empty() {
        return Err(Error::EmptyConceptSet { min_size });
    }
    let mut remap = vec![None; k_in];
    for (new, &old) in source_clusters.iter().enumerate() {
        remap[old] = Some(new);
    }
    let new_labels: Vec<Option<usize>> = labels.iter().map(|&l| remap[l]).collect();
    let residual_pool = (0..labels.len())
        .filter(|&i| new_labels[i].is_none())
        .collect();
    Ok(ClusterAssignment {
        labels: new_labels,
        k: source_clusters.len(),
        counts: source_clusters.iter().map(|&c| sizes[c]).collect(),
        source_clusters,
        residual_pool,
    })
}
