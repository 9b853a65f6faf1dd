#![allow(dead_code)]

use conceptspace::concept_model::{build_space, ConceptBasis, ConceptSpace};
use conceptspace::numerics::{Matrix, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Orthonormal `dim × d` block.
pub fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, d: usize) -> Matrix {
    gaussian(rng, dim, d).qr().q().columns(0, d).into_owned()
}

/// Random oblique space: 1 to 4 concepts of 1 to 3 dimensions in ℝ^dim,
/// leaving at least one complement direction.
pub fn random_space(rng: &mut ChaCha8Rng, dim: usize) -> ConceptSpace {
    let n = rng.random_range(1..=4);
    let mut budget = dim - 1;
    let mut bases = Vec::new();
    for l in 0..n {
        if budget == 0 {
            break;
        }
        let d = rng.random_range(1..=3).min(budget);
        budget -= d;
        bases.push(ConceptBasis {
            concept_id: l,
            basis: orthonormal(rng, dim, d),
            captured_variance: 1.0,
            mean: None,
        });
    }
    build_space(bases, dim, 1e6).expect("random bases are independent")
}

/// Orthogonal space: disjoint column blocks of one random rotation.
pub fn orthogonal_space(rng: &mut ChaCha8Rng, dim: usize, dims: &[usize]) -> ConceptSpace {
    let q = orthonormal(rng, dim, dim);
    let mut start = 0;
    let bases = dims
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            let b = ConceptBasis {
                concept_id: l,
                basis: q.columns(start, d).into_owned(),
                captured_variance: 1.0,
                mean: None,
            };
            start += d;
            b
        })
        .collect();
    build_space(bases, dim, 1e6).unwrap()
}

/// `per` points from each planted subspace, rows of the result; labels in
/// order of the subspaces.
pub fn planted_subspaces(
    rng: &mut ChaCha8Rng,
    dim: usize,
    dims: &[usize],
    per: usize,
    noise: f64,
) -> (Matrix, Vec<usize>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (l, &d) in dims.iter().enumerate() {
        let u = orthonormal(rng, dim, d);
        for _ in 0..per {
            let mut p = &u * gaussian_vec(rng, d);
            p /= p.norm();
            p += gaussian_vec(rng, dim) * noise;
            rows.push(p.transpose());
            labels.push(l);
        }
    }
    (Matrix::from_rows(&rows), labels)
}

/// Fraction of points whose label agrees with `truth` under the best
/// one-to-one relabeling (k ≤ 6).
pub fn matched_accuracy(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut best = 0;
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |p| {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(a, b)| p[**a] == **b)
            .count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

pub fn permutations(v: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permutations(v, i + 1, f);
        v.swap(i, j);
    }
}
