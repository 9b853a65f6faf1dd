//! Concept subspaces and the exact decomposition of features and class
//! weights into per-concept parts.
//!
//! Concept `l` is spanned by the orthonormal columns of `Cˡ`. All concept
//! columns together with an orthonormal basis `Q` of their orthogonal
//! complement form an invertible `D × D` matrix `B = [C¹|…|Cⁿ|Q]`. Any vector
//! `v` then has unique coordinates `B⁻¹v`; summing the columns of each block
//! with those coordinates gives `v = Σₗ vˡ` exactly, even when the concept
//! subspaces are not orthogonal to each other. Block `n + 1` (index `n` here)
//! is always the complement.

use std::cmp::Ordering;

use nalgebra::linalg::LU;
use nalgebra::Dyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::{
    orthonormal_complement, orthonormality_defect, svd_thin, tol, Matrix, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBasis {
    pub concept_id: usize,
    /// D × d_l, orthonormal columns.
    pub basis: Matrix,
    /// Share of the members' squared singular mass captured by `basis`.
    pub captured_variance: f64,
    /// Member mean, only in centered mode.
    pub mean: Option<Vector>,
}

impl ConceptBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Top right singular vectors of the (uncentered) member matrix, as many as
/// needed to reach `var_threshold` of the squared singular mass.
pub fn fit_basis(concept_id: usize, members: &Matrix, var_threshold: f64) -> Result<ConceptBasis> {
    fit(concept_id, members, var_threshold, false)
}

/// Like [`fit_basis`] but on mean-centered members; the mean is kept.
pub fn fit_basis_centered(
    concept_id: usize,
    members: &Matrix,
    var_threshold: f64,
) -> Result<ConceptBasis> {
    fit(concept_id, members, var_threshold, true)
}

fn fit(
    concept_id: usize,
    members: &Matrix,
    var_threshold: f64,
    centered: bool,
) -> Result<ConceptBasis> {
    if !(var_threshold > 0.0 && var_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "variance threshold must lie in (0, 1], got {var_threshold}"
        )));
    }
    if members.nrows() < 2 {
        return Err(Error::DegenerateCluster {
            cluster: concept_id,
            reason: format!("{} member(s); at least 2 are needed", members.nrows()),
        });
    }
    let (data, mean) = if centered {
        let mean = members.row_mean().transpose();
        let mut centered = members.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        (centered, Some(mean))
    } else {
        (members.clone(), None)
    };
    let svd = svd_thin(&data)?;
    let energy: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateCluster {
            cluster: concept_id,
            reason: "members span no direction (zero matrix)".into(),
        });
    }
    let mut acc = 0.0;
    let mut d = energy.len();
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc / total >= var_threshold {
            d = i + 1;
            break;
        }
    }
    let captured = energy[..d].iter().sum::<f64>() / total;
    Ok(ConceptBasis {
        concept_id,
        basis: svd.v.columns(0, d).into_owned(),
        captured_variance: captured,
        mean,
    })
}

/// A concept column removed by rank repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedDirection {
    pub concept_id: usize,
    pub column: usize,
}

#[derive(Debug, Clone)]
pub struct ConceptSpace {
    pub dim: usize,
    /// Concept bases after rank repair.
    pub bases: Vec<ConceptBasis>,
    /// Orthonormal basis of the complement, D × (D − Σd_l).
    pub complement: Matrix,
    /// `[C¹|…|Cⁿ|Q]`
    pub full: Matrix,
    /// Block index of every column of `full`; `n` is the complement.
    pub owner: Vec<usize>,
    pub dropped: Vec<DroppedDirection>,
    /// 2-norm condition number of `full`.
    pub condition: f64,
    lu: LU<f64, Dyn, Dyn>,
}

fn condition_number(a: &Matrix) -> Result<f64> {
    if a.ncols() == 0 {
        return Ok(1.0);
    }
    if a.ncols() > a.nrows() {
        return Ok(f64::INFINITY);
    }
    let s = svd_thin(a)?.s;
    let min = *s.last().expect("non-empty");
    Ok(if min > 0.0 { s[0] / min } else { f64::INFINITY })
}

fn assemble(bases: &[ConceptBasis], keep: &[Vec<bool>], dim: usize) -> Matrix {
    let cols: Vec<Vector> = bases
        .iter()
        .zip(keep)
        .flat_map(|(b, k)| {
            (0..b.dim())
                .filter(|&j| k[j])
                .map(|j| b.basis.column(j).into_owned())
        })
        .collect();
    if cols.is_empty() {
        Matrix::zeros(dim, 0)
    } else {
        Matrix::from_columns(&cols)
    }
}

/// Assembles the full basis. While the concept columns are more than `D` or
/// their condition number exceeds `cond_cap`, the column whose removal gives
/// the best-conditioned remainder is dropped (ties to the earliest column);
/// a concept never loses its last column.
pub fn build_space(bases: Vec<ConceptBasis>, dim: usize, cond_cap: f64) -> Result<ConceptSpace> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "feature dimension must be positive".into(),
        ));
    }
    if !(cond_cap >= 1.0) {
        return Err(Error::Config(format!(
            "condition cap must be at least 1, got {cond_cap}"
        )));
    }
    for b in &bases {
        if b.basis.nrows() != dim {
            return Err(Error::InvalidArgument(format!(
                "concept {} lives in R^{} but the space is R^{dim}",
                b.concept_id,
                b.basis.nrows()
            )));
        }
        if b.dim() == 0 {
            return Err(Error::DegenerateCluster {
                cluster: b.concept_id,
                reason: "empty basis".into(),
            });
        }
        let defect = orthonormality_defect(&b.basis);
        if defect > tol::ORTHONORMAL {
            return Err(Error::Contract(format!(
                "basis of concept {} is not orthonormal (defect {defect:.3e})",
                b.concept_id
            )));
        }
    }
    let requested: usize = bases.iter().map(ConceptBasis::dim).sum();
    let mut keep: Vec<Vec<bool>> = bases.iter().map(|b| vec![true; b.dim()]).collect();
    let mut dropped = Vec::new();
    loop {
        let a = assemble(&bases, &keep, dim);
        if condition_number(&a)? <= cond_cap {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (l, k) in keep.iter().enumerate() {
            if k.iter().filter(|&&x| x).count() < 2 {
                continue;
            }
            for j in (0..k.len()).filter(|&j| k[j]) {
                let mut trial = keep.clone();
                trial[l][j] = false;
                let c = condition_number(&assemble(&bases, &trial, dim))?;
                if best.is_none_or(|(bc, _, _)| c < bc) {
                    best = Some((c, l, j));
                }
            }
        }
        match best {
            Some((_, l, j)) => {
                keep[l][j] = false;
                dropped.push(DroppedDirection {
                    concept_id: bases[l].concept_id,
                    column: j,
                });
            }
            None => {
                return Err(Error::DimensionOverflow {
                    requested,
                    concepts: bases.len(),
                    dim,
                })
            }
        }
    }

    let bases: Vec<ConceptBasis> = bases
        .into_iter()
        .zip(&keep)
        .map(|(mut b, k)| {
            let cols: Vec<Vector> = (0..b.dim())
                .filter(|&j| k[j])
                .map(|j| b.basis.column(j).into_owned())
                .collect();
            b.basis = Matrix::from_columns(&cols);
            b
        })
        .collect();
    let concepts = assemble(&bases, &vec![vec![true; dim]; bases.len()], dim);
    let m = concepts.ncols();
    let span = if m == 0 {
        Matrix::zeros(dim, 0)
    } else {
        svd_thin(&concepts)?.u.columns(0, m).into_owned()
    };
    let complement = orthonormal_complement(&span)?;
    let mut owner = Vec::with_capacity(dim);
    for (l, b) in bases.iter().enumerate() {
        owner.extend(std::iter::repeat_n(l, b.dim()));
    }
    owner.extend(std::iter::repeat_n(bases.len(), complement.ncols()));
    let mut full = Matrix::zeros(dim, dim);
    full.columns_mut(0, m).copy_from(&concepts);
    full.columns_mut(m, dim - m).copy_from(&complement);
    let condition = condition_number(&full)?;
    let lu = full.clone().lu();
    Ok(ConceptSpace {
        dim,
        bases,
        complement,
        full,
        owner,
        dropped,
        condition,
        lu,
    })
}

impl ConceptSpace {
    /// Number of concepts `n` (the complement is block `n`).
    pub fn n_concepts(&self) -> usize {
        self.bases.len()
    }

    pub fn concept_dims(&self) -> Vec<usize> {
        self.bases.iter().map(ConceptBasis::dim).collect()
    }

    /// Rebuilds a space from a stored full basis and column ownership.
    pub fn from_parts(
        bases_meta: Vec<(usize, f64)>,
        full: Matrix,
        owner: Vec<usize>,
        dropped: Vec<DroppedDirection>,
    ) -> Result<Self> {
        let dim = full.nrows();
        let n = bases_meta.len();
        if !full.is_square() || owner.len() != dim || owner.iter().any(|&o| o > n) {
            return Err(Error::InvalidArgument(
                "inconsistent concept space layout".into(),
            ));
        }
        if owner.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "concept space columns must be grouped by block".into(),
            ));
        }
        let block = |l: usize| {
            let cols: Vec<Vector> = (0..dim)
                .filter(|&j| owner[j] == l)
                .map(|j| full.column(j).into_owned())
                .collect();
            if cols.is_empty() {
                Matrix::zeros(dim, 0)
            } else {
                Matrix::from_columns(&cols)
            }
        };
        let bases = bases_meta
            .iter()
            .enumerate()
            .map(|(l, &(concept_id, captured_variance))| ConceptBasis {
                concept_id,
                basis: block(l),
                captured_variance,
                mean: None,
            })
            .collect();
        let complement = block(n);
        let condition = condition_number(&full)?;
        let lu = full.clone().lu();
        Ok(Self {
            dim,
            bases,
            complement,
            full,
            owner,
            dropped,
            condition,
            lu,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `B⁻¹v`
    pub coefficients: Vector,
    /// `vˡ` for every block, complement last.
    pub components: Vec<Vector>,
}

impl Decomposition {
    pub fn reconstruct(&self) -> Vector {
        self.components
            .iter()
            .fold(Vector::zeros(self.coefficients.len()), |acc, c| acc + c)
    }
}

/// Splits `v` into one component per concept plus the complement.
pub fn decompose(v: &[f64], space: &ConceptSpace) -> Result<Decomposition> {
    if v.len() != space.dim {
        return Err(Error::InvalidArgument(format!(
            "vector has length {} but the space is R^{}",
            v.len(),
            space.dim
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "vector contains non-finite entries".into(),
        ));
    }
    let rhs = Vector::from_column_slice(v);
    let coefficients = space.lu.solve(&rhs).ok_or(Error::NonConvergence {
        op: "concept basis solve",
        rows: space.dim,
        cols: space.dim,
    })?;
    let mut components = vec![Vector::zeros(space.dim); space.n_concepts() + 1];
    for (j, &l) in space.owner.iter().enumerate() {
        components[l].axpy(coefficients[j], &space.full.column(j), 1.0);
    }
    Ok(Decomposition {
        coefficients,
        components,
    })
}

/// `aₗ = ‖φˡ‖/‖φ‖` for every block, complement last.
pub fn activation_scores(dec: &Decomposition, phi: &[f64]) -> Result<Vec<f64>> {
    let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument(
            "activation scores are undefined for φ = 0".into(),
        ));
    }
    Ok(dec.components.iter().map(|c| c.norm() / norm).collect())
}

/// One class of the linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    pub class: usize,
    pub w: Vector,
    pub bias: f64,
}

impl ClassHead {
    pub fn from_model(g: &ModelGraph, class: usize) -> Result<Self> {
        let head = g.head();
        if class >= head.out_features {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} outputs",
                head.out_features
            )));
        }
        Ok(Self {
            class,
            w: Vector::from_iterator(head.in_features, head.row(class).iter().map(|&v| v as f64)),
            bias: head.bias[class] as f64,
        })
    }
}

/// `rˡ = φˡ·w` for every block; they sum to `φ·w`, the logit minus the bias.
pub fn local_relevance(dec: &Decomposition, head: &ClassHead) -> Result<Vec<f64>> {
    if head.w.len() != dec.coefficients.len() {
        return Err(Error::InvalidArgument(
            "head and decomposition dimensions differ".into(),
        ));
    }
    Ok(dec.components.iter().map(|c| c.dot(&head.w)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalScores {
    /// `‖wˡ‖²/‖w‖²` for every block, complement last.
    pub per_concept: Vec<f64>,
    /// `η = 1 − ‖w^⊥‖²/‖w‖²`, in `[0, 1]`.
    pub completeness: f64,
    pub weight_decomposition: Decomposition,
}

pub fn global_relevance(space: &ConceptSpace, head: &ClassHead) -> Result<GlobalScores> {
    let w2 = head.w.norm_squared();
    if !(w2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "class {} has a zero weight vector",
            head.class
        )));
    }
    let dec = decompose(head.w.as_slice(), space)?;
    let per_concept: Vec<f64> = dec
        .components
        .iter()
        .map(|c| c.norm_squared() / w2)
        .collect();
    let completeness = (1.0 - per_concept[space.n_concepts()]).clamp(0.0, 1.0);
    Ok(GlobalScores {
        per_concept,
        completeness,
        weight_decomposition: dec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Index into the space's concepts.
    Concept(usize),
    Residual,
}

/// The concept with the largest activation (lowest index on ties), or
/// [`Assignment::Residual`] when the complement's activation is strictly the
/// largest of all.
pub fn assign_segment(phi: &[f64], space: &ConceptSpace) -> Result<Assignment> {
    let dec = decompose(phi, space)?;
    let a = activation_scores(&dec, phi)?;
    Ok(assign_from_activations(&a))
}

pub fn assign_from_activations(a: &[f64]) -> Assignment {
    let n = a.len() - 1;
    let mut best: Option<usize> = None;
    for l in 0..n {
        if best.is_none_or(|b| a[l] > a[b]) {
            best = Some(l);
        }
    }
    match best {
        Some(b) if a[n] <= a[b] => Assignment::Concept(b),
        _ => Assignment::Residual,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeCandidate {
    pub image_id: String,
    pub segment_id: u32,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub ranked: Vec<PrototypeCandidate>,
    /// Fewer candidates than requested.
    pub truncated: bool,
}

/// The `top_k` candidates by activation, ties by `(image_id, segment_id)`.
pub fn concept_prototypes(candidates: &[PrototypeCandidate], top_k: usize) -> Result<Prototypes> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        b.activation
            .partial_cmp(&a.activation)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then(a.segment_id.cmp(&b.segment_id))
    });
    let truncated = ranked.len() < top_k;
    ranked.truncate(top_k);
    Ok(Prototypes { ranked, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> Vector {
        let mut v = Vector::zeros(dim);
        v[i] = 1.0;
        v
    }

    fn basis(id: usize, cols: &[Vector]) -> ConceptBasis {
        ConceptBasis {
            concept_id: id,
            basis: Matrix::from_columns(cols),
            captured_variance: 1.0,
            mean: None,
        }
    }

    #[test]
    fn multiples_of_one_direction_give_one_dimension() {
        let v = Vector::from_vec(vec![0.6, 0.0, 0.8]);
        let members = Matrix::from_fn(5, 3, |r, c| (r as f64 - 1.5) * v[c]);
        let b = fit_basis(0, &members, 0.8).unwrap();
        assert_eq!(b.dim(), 1);
        assert!((b.basis.column(0).dot(&v).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seventy_thirty_split_needs_two_directions() {
        // Squared mass 0.7 along e₁, 0.3 along e₂.
        let members =
            Matrix::from_row_slice(2, 3, &[0.7f64.sqrt(), 0.0, 0.0, 0.0, 0.3f64.sqrt(), 0.0]);
        let b = fit_basis(0, &members, 0.8).unwrap();
        assert_eq!(b.dim(), 2);
        assert!((b.captured_variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_members_are_degenerate() {
        assert!(matches!(
            fit_basis(4, &Matrix::zeros(3, 2), 0.8),
            Err(Error::DegenerateCluster { cluster: 4, .. })
        ));
        assert!(matches!(
            fit_basis(4, &Matrix::zeros(1, 2), 0.8),
            Err(Error::DegenerateCluster { .. })
        ));
    }

    #[test]
    fn centered_mode_keeps_the_mean() {
        let members = Matrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 1.0, 3.0, 1.0]);
        let b = fit_basis_centered(0, &members, 0.8).unwrap();
        assert_eq!(b.mean.as_ref().unwrap().as_slice(), &[2.0, 1.0]);
        assert_eq!(b.dim(), 1);
        assert!((b.basis[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_of_two_coordinate_planes() {
        let space = build_space(
            vec![
                basis(0, &[unit(6, 0), unit(6, 1)]),
                basis(1, &[unit(6, 2), unit(6, 3)]),
            ],
            6,
            1e6,
        )
        .unwrap();
        assert_eq!(space.complement.ncols(), 2);
        let leak: f64 = (0..4).map(|i| space.complement.row(i).norm()).sum();
        assert!(leak < 1e-12);
        assert_eq!(space.owner, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn duplicated_direction_is_dropped_and_recorded() {
        let space = build_space(
            vec![basis(3, &[unit(4, 0), unit(4, 1)]), basis(8, &[unit(4, 0)])],
            4,
            1e6,
        )
        .unwrap();
        assert_eq!(
            space.dropped,
            vec![DroppedDirection {
                concept_id: 3,
                column: 0
            }]
        );
        assert_eq!(space.concept_dims(), vec![1, 1]);
        assert!(space.condition <= 1e6);
    }

    #[test]
    fn irreparable_overlap_overflows() {
        let err = build_space(
            vec![basis(0, &[unit(3, 0)]), basis(1, &[unit(3, 0)])],
            3,
            1e6,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionOverflow {
                requested: 2,
                concepts: 2,
                dim: 3
            }
        ));
    }

    #[test]
    fn local_relevance_on_coordinate_planes() {
        let space = build_space(
            vec![
                basis(0, &[unit(4, 0), unit(4, 1)]),
                basis(1, &[unit(4, 2), unit(4, 3)]),
            ],
            4,
            1e6,
        )
        .unwrap();
        let phi = [1.0, 1.0, 1.0, 1.0];
        let dec = decompose(&phi, &space).unwrap();
        let head = ClassHead {
            class: 0,
            w: unit(4, 0),
            bias: 0.0,
        };
        let r = local_relevance(&dec, &head).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn completeness_extremes() {
        let space = build_space(vec![basis(0, &[unit(3, 0)])], 3, 1e6).unwrap();
        let head = ClassHead {
            class: 0,
            w: Vector::from_vec(vec![0.0, 2.0, -1.0]),
            bias: 0.0,
        };
        assert_eq!(global_relevance(&space, &head).unwrap().completeness, 0.0);
        let full = build_space(
            vec![basis(0, &[unit(2, 0)]), basis(1, &[unit(2, 1)])],
            2,
            1e6,
        )
        .unwrap();
        let head = ClassHead {
            class: 0,
            w: Vector::from_vec(vec![0.3, -0.7]),
            bias: 0.0,
        };
        assert_eq!(global_relevance(&full, &head).unwrap().completeness, 1.0);
        let zero = ClassHead {
            class: 0,
            w: Vector::zeros(2),
            bias: 0.0,
        };
        assert!(global_relevance(&full, &zero).is_err());
    }

    #[test]
    fn assignment_rules() {
        let space = build_space(
            vec![basis(0, &[unit(3, 0)]), basis(1, &[unit(3, 1)])],
            3,
            1e6,
        )
        .unwrap();
        assert_eq!(
            assign_segment(&[0.0, 2.0, 0.1], &space).unwrap(),
            Assignment::Concept(1)
        );
        assert_eq!(
            assign_segment(&[0.1, 0.0, 2.0], &space).unwrap(),
            Assignment::Residual
        );
        assert_eq!(
            assign_segment(&[1.0, 1.0, 0.0], &space).unwrap(),
            Assignment::Concept(0)
        );
        // Complement tied with the best concept is not a strict maximum.
        assert_eq!(
            assign_segment(&[1.0, 0.0, 1.0], &space).unwrap(),
            Assignment::Concept(0)
        );
    }

    #[test]
    fn prototypes_rank_by_activation() {
        let c = |id: u32, a: f64| PrototypeCandidate {
            image_id: "img".into(),
            segment_id: id,
            activation: a,
        };
        let p = concept_prototypes(&[c(1, 0.9), c(2, 0.5), c(3, 0.7)], 2).unwrap();
        assert_eq!(
            p.ranked.iter().map(|r| r.segment_id).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert!(!p.truncated);
        let p = concept_prototypes(&[c(1, 0.9)], 4).unwrap();
        assert_eq!(p.ranked.len(), 1);
        assert!(p.truncated);
        let p = concept_prototypes(&[c(5, 0.5), c(2, 0.5)], 2).unwrap();
        assert_eq!(p.ranked[0].segment_id, 2);
    }
}
