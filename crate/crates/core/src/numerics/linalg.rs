use nalgebra::linalg::{SymmetricEigen, SVD};

use super::{ensure_finite, orthonormality_defect, symmetry_defect, tol, Matrix};
use crate::error::{Error, Result};

/// Thin singular value decomposition `A = U·diag(S)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// rows × r, orthonormal columns.
    pub u: Matrix,
    /// r singular values, non-negative and descending.
    pub s: Vec<f64>,
    /// cols × r, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, sigma) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sigma);
        }
        us * self.v.transpose()
    }
}

pub fn svd_thin(a: &Matrix) -> Result<ThinSvd> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "svd of an empty {rows}x{cols} matrix"
        )));
    }
    ensure_finite(a, "svd input")?;
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, tol::MAX_SWEEPS).ok_or(
        Error::NonConvergence {
            op: "svd",
            rows,
            cols,
        },
    )?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::NonConvergence {
                op: "svd",
                rows,
                cols,
            })
        }
    };
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let r = order.len();
    let mut u_sorted = Matrix::zeros(rows, r);
    let mut v_sorted = Matrix::zeros(cols, r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s.push(sigma[src].max(0.0));
    }
    Ok(ThinSvd {
        u: u_sorted,
        s,
        v: v_sorted,
    })
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector of `eigenvalues[j]`.
    pub eigenvectors: Matrix,
}

impl SpectrumResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut vl = self.eigenvectors.clone();
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            vl.column_mut(j).scale_mut(*lambda);
        }
        vl * self.eigenvectors.transpose()
    }
}

pub fn eig_symmetric(a: &Matrix) -> Result<SpectrumResult> {
    let (rows, cols) = a.shape();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidArgument(format!(
            "eig_symmetric needs a non-empty square matrix, got {rows}x{cols}"
        )));
    }
    ensure_finite(a, "eig_symmetric input")?;
    let defect = symmetry_defect(a);
    if defect > tol::SYMMETRY {
        return Err(Error::Contract(format!(
            "eig_symmetric input is not symmetric (max |A - Aᵀ| = {defect:.3e})"
        )));
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, tol::MAX_SWEEPS).ok_or(
        Error::NonConvergence {
            op: "symmetric eigendecomposition",
            rows,
            cols,
        },
    )?;
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let mut vectors = Matrix::zeros(rows, rows);
    let mut values = Vec::with_capacity(rows);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
    }
    Ok(SpectrumResult {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Orthonormal basis of the orthogonal complement of `span(B)` for a `B` with
/// orthonormal columns. Returns a `D×(D−m)` matrix.
pub fn orthonormal_complement(b: &Matrix) -> Result<Matrix> {
    let (dim, m) = b.shape();
    if m > dim {
        return Err(Error::Contract(format!(
            "{m} columns cannot be orthonormal in R^{dim}"
        )));
    }
    ensure_finite(b, "complement input")?;
    if m > 0 {
        let defect = orthonormality_defect(b);
        if defect > tol::ORTHONORMAL {
            return Err(Error::Contract(format!(
                "complement input columns are not orthonormal (max |BᵀB - I| = {defect:.3e})"
            )));
        }
    }
    let rest = dim - m;
    if rest == 0 {
        return Ok(Matrix::zeros(dim, 0));
    }
    if m == 0 {
        return Ok(Matrix::identity(dim, dim));
    }

    // The projector onto span(B)^⊥ has eigenvalue 1 with multiplicity D−m and
    // 0 with multiplicity m; its leading eigenvectors are the complement.
    let mut projector = Matrix::identity(dim, dim) - b * b.transpose();
    projector = (&projector + projector.transpose()) * 0.5;
    let spectrum = eig_symmetric(&projector)?;
    let q = spectrum.eigenvectors.columns(0, rest).into_owned();

    let leak = (b.transpose() * &q).amax();
    let defect = orthonormality_defect(&q);
    if leak > tol::ORTHONORMAL || defect > tol::ORTHONORMAL {
        return Err(Error::Contract(format!(
            "complement is ill-conditioned (|BᵀQ| = {leak:.3e}, |QᵀQ - I| = {defect:.3e})"
        )));
    }
    Ok(q)
}
