use nalgebra::linalg::Cholesky;

use super::lasso::LassoSolution;
use super::lasso_cd::CoordinateDescent;
use super::{ensure_finite, Matrix, Vector};
use crate::error::{Error, Result};

/// Squared norm, relative to the atom's own, that an atom must keep outside
/// the active span to join the active set.
const COLLINEAR: f64 = 1e-10;

/// Exact lasso by following the piecewise-linear solution path from
/// `λ = ‖Dᵀy‖∞` down to the requested `λ` (the lasso variant of least
/// angle regression).
///
/// Along each path segment the active coefficients move in the direction
/// that keeps every active correlation equal in magnitude; a segment ends
/// when an inactive atom reaches that magnitude (it joins), an active
/// coefficient crosses zero (it leaves), or the target is reached. Atoms
/// numerically inside the active span are kept out. Rounding left at the end
/// is removed by warm-started coordinate descent.
pub struct Homotopy {
    dictionary: Matrix,
    cd: CoordinateDescent,
}

impl Homotopy {
    /// `dictionary` is `dim × atoms`; each column is one atom.
    pub fn new(dictionary: &Matrix) -> Result<Self> {
        let (dim, atoms) = dictionary.shape();
        if dim == 0 || atoms == 0 {
            return Err(Error::InvalidArgument(format!(
                "lasso dictionary must be non-empty, got {dim}x{atoms}"
            )));
        }
        ensure_finite(dictionary, "lasso dictionary")?;
        Ok(Self {
            dictionary: dictionary.clone(),
            cd: CoordinateDescent::new(dictionary)?,
        })
    }

    pub fn solve(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<LassoSolution> {
        self.solve_impl(y, lambda, max_iter, tol, None)
    }

    /// Coefficient `excluded` is pinned to zero.
    pub fn solve_excluding(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
        excluded: usize,
    ) -> Result<LassoSolution> {
        self.solve_impl(y, lambda, max_iter, tol, Some(excluded))
    }

    fn solve_impl(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
        excluded: Option<usize>,
    ) -> Result<LassoSolution> {
        let (dim, atoms) = self.dictionary.shape();
        if y.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "lasso target has length {} but atoms live in R^{dim}",
                y.len()
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lasso lambda must be positive, got {lambda}"
            )));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "lasso target contains non-finite entries".into(),
            ));
        }
        if let Some(e) = excluded {
            if e >= atoms {
                return Err(Error::InvalidArgument(format!(
                    "excluded atom {e} out of range"
                )));
            }
        }

        let d = &self.dictionary;
        let norms_sq: Vec<f64> = d.column_iter().map(|c| c.norm_squared()).collect();
        // Atoms that may never join: the excluded one, zero atoms, and atoms
        // found collinear with the active set.
        let mut blocked: Vec<bool> = (0..atoms)
            .map(|j| Some(j) == excluded || norms_sq[j] == 0.0)
            .collect();
        let mut c = d.tr_mul(y);
        let mut x = Vector::zeros(atoms);
        let mut active: Vec<usize> = Vec::new();
        let mut level = 0.0;
        for j in 0..atoms {
            if !blocked[j] && c[j].abs() > level {
                level = c[j].abs();
                active = vec![j];
            }
        }
        let mut steps = 0;
        // An atom that just left sits exactly at the active level; it must not
        // rejoin on the following segment.
        let mut just_left: Option<usize> = None;
        if level > lambda {
            loop {
                if steps >= max_iter {
                    break;
                }
                steps += 1;
                let signs =
                    Vector::from_iterator(active.len(), active.iter().map(|&j| c[j].signum()));
                let sub = Matrix::from_fn(dim, active.len(), |r, k| d[(r, active[k])]);
                let Some(chol) = Cholesky::new(sub.tr_mul(&sub)) else {
                    // The last joiner made the active Gram singular.
                    let j = active.pop().expect("non-empty active set");
                    blocked[j] = true;
                    continue;
                };
                let w = chol.solve(&signs);
                let u = &sub * &w;
                let a = d.tr_mul(&u);

                // Step length to each event; ties go to the lowest index.
                let mut gamma = level - lambda;
                let mut event = Event::Target;
                for j in 0..atoms {
                    if blocked[j] || just_left == Some(j) || active.contains(&j) {
                        continue;
                    }
                    for g in [(level - c[j]) / (1.0 - a[j]), (level + c[j]) / (1.0 + a[j])] {
                        if g > 0.0 && g < gamma {
                            gamma = g;
                            event = Event::Join(j);
                        }
                    }
                }
                for (k, &j) in active.iter().enumerate() {
                    let g = -x[j] / w[k];
                    if g > 0.0 && g < gamma {
                        gamma = g;
                        event = Event::Leave(k);
                    }
                }

                for (k, &j) in active.iter().enumerate() {
                    x[j] += gamma * w[k];
                }
                c.axpy(-gamma, &a, 1.0);
                level -= gamma;
                just_left = None;
                match event {
                    Event::Target => break,
                    Event::Leave(k) => {
                        let j = active.remove(k);
                        x[j] = 0.0;
                        just_left = Some(j);
                    }
                    Event::Join(j) => {
                        if self.outside_span(&sub, j) {
                            active.push(j);
                        } else {
                            blocked[j] = true;
                        }
                    }
                }
                if active.is_empty() {
                    break;
                }
            }
        }
        let polished =
            self.cd
                .solve_from(y, lambda, max_iter.saturating_sub(steps), tol, excluded, x)?;
        Ok(LassoSolution {
            iterations: steps + polished.iterations,
            ..polished
        })
    }

    /// Whether atom `j` keeps a non-negligible part outside the columns of
    /// `sub`.
    fn outside_span(&self, sub: &Matrix, j: usize) -> bool {
        let a = self.dictionary.column(j);
        let norm_sq = a.norm_squared();
        if sub.ncols() == 0 {
            return norm_sq > 0.0;
        }
        let q = sub.clone().qr().q();
        let proj = &q * q.tr_mul(&a);
        (a - proj).norm_squared() > COLLINEAR * norm_sq
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Target,
    Join(usize),
    Leave(usize),
}

/// `argmin_c ½‖y − Dc‖² + λ‖c‖₁` along the homotopy path.
pub fn lasso_homotopy(
    dictionary: &Matrix,
    y: &Vector,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Vector> {
    Ok(Homotopy::new(dictionary)?
        .solve(y, lambda, max_iter, tol)?
        .coefficients)
}
