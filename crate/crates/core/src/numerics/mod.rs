//! Dense linear algebra and optimization primitives.
//!
//! Everything here is a pure function over immutable inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; finiteness is checked at the public entry points.

mod kmeans;
mod lasso;
mod lasso_cd;
mod lasso_homotopy;
mod linalg;

pub use kmeans::{kmeans, KMeansResult};
pub use lasso::{lasso_admm, lasso_objective, LassoSolution, LassoSolver, ADMM_RHO};
pub use lasso_cd::{lasso_cd, CoordinateDescent};
pub use lasso_homotopy::{lasso_homotopy, Homotopy};
pub use linalg::{eig_symmetric, orthonormal_complement, svd_thin, SpectrumResult, ThinSvd};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Central tolerance table.
pub mod tol {
    /// Max-abs deviation of `QᵀQ` from the identity accepted as orthonormal.
    pub const ORTHONORMAL: f64 = 1e-6;
    /// Max-abs deviation of `A` from `Aᵀ` accepted as symmetric.
    pub const SYMMETRY: f64 = 1e-8;
    /// Relative reconstruction error for factorizations and decompositions.
    pub const RECONSTRUCTION: f64 = 1e-6;
    /// Iteration cap handed to the SVD and symmetric eigen solvers.
    pub const MAX_SWEEPS: usize = 10_000;
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} contains non-finite entries"
        )))
    }
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthonormality_defect(q: &Matrix) -> f64 {
    let gram = q.transpose() * q;
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Largest absolute entry of `A − Aᵀ`.
pub fn symmetry_defect(a: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
