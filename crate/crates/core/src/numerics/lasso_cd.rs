use super::lasso::{soft_threshold, LassoSolution};
use super::{ensure_finite, Matrix, Vector};
use crate::error::{Error, Result};

/// Passes over the active set between two full sweeps.
const ACTIVE_PASSES: usize = 32;

/// Cyclic coordinate descent lasso over a fixed dictionary.
///
/// The objective never increases from one coordinate update to the next.
/// `max_iter` bounds the total number of passes (full sweeps plus
/// active-set passes); convergence is declared when the KKT residual of the
/// iterate drops to `tol`.
pub struct CoordinateDescent {
    dictionary: Matrix,
    norms_sq: Vec<f64>,
}

impl CoordinateDescent {
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
            norms_sq: dictionary.column_iter().map(|c| c.norm_squared()).collect(),
        })
    }

    pub fn solve(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<LassoSolution> {
        self.solve_impl(y, lambda, max_iter, tol, None, None)
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
        self.solve_impl(y, lambda, max_iter, tol, Some(excluded), None)
    }

    /// Continues from the iterate `start`.
    pub(crate) fn solve_from(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
        excluded: Option<usize>,
        start: Vector,
    ) -> Result<LassoSolution> {
        self.solve_impl(y, lambda, max_iter, tol, excluded, Some(start))
    }

    fn update(&self, j: usize, z: &mut Vector, r: &mut Vector, lambda: f64) -> f64 {
        let nrm = self.norms_sq[j];
        let a = self.dictionary.column(j);
        let g = a.dot(r);
        let new = soft_threshold(z[j] + g / nrm, lambda / nrm);
        let delta = new - z[j];
        if delta != 0.0 {
            r.axpy(-delta, &a, 1.0);
            z[j] = new;
        }
        delta.abs() * nrm.sqrt()
    }

    fn kkt(&self, y: &Vector, z: &Vector, lambda: f64, excluded: Option<usize>) -> f64 {
        let mut r = y.clone();
        for (j, &c) in z.iter().enumerate() {
            if c != 0.0 {
                r.axpy(-c, &self.dictionary.column(j), 1.0);
            }
        }
        let mut worst: f64 = 0.0;
        for (j, a) in self.dictionary.column_iter().enumerate() {
            if Some(j) == excluded {
                continue;
            }
            let g = a.dot(&r);
            let res = if z[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * z[j].signum()).abs()
            };
            worst = worst.max(res);
        }
        worst
    }

    fn solve_impl(
        &self,
        y: &Vector,
        lambda: f64,
        max_iter: usize,
        tol: f64,
        excluded: Option<usize>,
        start: Option<Vector>,
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
        let usable: Vec<usize> = (0..atoms)
            .filter(|&j| Some(j) != excluded && self.norms_sq[j] > 0.0)
            .collect();

        let mut z = start.unwrap_or_else(|| Vector::zeros(atoms));
        if z.len() != atoms {
            return Err(Error::InvalidArgument(
                "warm start has the wrong length".into(),
            ));
        }
        if let Some(e) = excluded {
            z[e] = 0.0;
        }
        let mut r = y - &self.dictionary * &z;
        let mut residual = self.kkt(y, &z, lambda, excluded);
        let mut passes = 0;
        while residual > tol && passes < max_iter {
            for &j in &usable {
                self.update(j, &mut z, &mut r, lambda);
            }
            passes += 1;
            let active: Vec<usize> = usable.iter().copied().filter(|&j| z[j] != 0.0).collect();
            for _ in 0..ACTIVE_PASSES {
                if passes >= max_iter {
                    break;
                }
                let mut biggest: f64 = 0.0;
                for &j in &active {
                    biggest = biggest.max(self.update(j, &mut z, &mut r, lambda));
                }
                passes += 1;
                if biggest <= 0.1 * tol {
                    break;
                }
            }
            residual = self.kkt(y, &z, lambda, excluded);
        }
        if residual <= 10.0 * tol {
            Ok(LassoSolution {
                coefficients: z,
                iterations: passes,
                kkt_residual: residual,
            })
        } else {
            Err(Error::LassoConvergence {
                residual,
                iterations: passes,
            })
        }
    }
}

/// `argmin_c ½‖y − Dc‖² + λ‖c‖₁` by coordinate descent.
pub fn lasso_cd(
    dictionary: &Matrix,
    y: &Vector,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Vector> {
    Ok(CoordinateDescent::new(dictionary)?
        .solve(y, lambda, max_iter, tol)?
        .coefficients)
}
