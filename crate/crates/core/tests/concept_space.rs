mod common;

use common::{gaussian, gaussian_vec, orthogonal_space, orthonormal, random_space};
use conceptspace::concept_model::{
    activation_scores, assign_segment, build_space, decompose, fit_basis, global_relevance,
    local_relevance, ClassHead, ConceptBasis,
};
use conceptspace::numerics::{Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn basis(id: usize, cols: &[&[f64]]) -> ConceptBasis {
    let cols: Vec<Vector> = cols.iter().map(|c| Vector::from_column_slice(c)).collect();
    ConceptBasis {
        concept_id: id,
        basis: Matrix::from_columns(&cols),
        captured_variance: 1.0,
        mean: None,
    }
}

fn head(w: Vector) -> ClassHead {
    ClassHead {
        class: 0,
        w,
        bias: 0.0,
    }
}

#[test]
fn oblique_pair_at_thirty_degrees() {
    let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
    let space = build_space(vec![basis(0, &[&[1.0, 0.0]]), basis(1, &[&[c, s]])], 2, 1e6).unwrap();
    assert_eq!(space.complement.ncols(), 0);
    let phi = [1.0, 1.0];
    let dec = decompose(&phi, &space).unwrap();
    let a = activation_scores(&dec, &phi).unwrap();
    let r3 = 3f64.sqrt();
    assert!(
        (a[0] - (1.0 - r3).abs() / 2f64.sqrt()).abs() < 1e-12,
        "{a:?}"
    );
    assert!((a[1] - 2f64.sqrt()).abs() < 1e-12, "{a:?}");
    assert_eq!(a[2], 0.0);
    // Oblique components can exceed the whole.
    assert!(a[0] * a[0] + a[1] * a[1] > 1.0);
}

#[test]
fn coefficients_match_an_svd_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let space = random_space(&mut rng, 12);
        let v = gaussian_vec(&mut rng, 12);
        let dec = decompose(v.as_slice(), &space).unwrap();
        let oracle = space.full.clone().svd(true, true).solve(&v, 1e-14).unwrap();
        assert!((&dec.coefficients - &oracle).norm() <= 1e-9 * oracle.norm().max(1.0));
    }
}

#[test]
fn residual_weight_never_grows_as_concepts_are_added() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let w = gaussian_vec(&mut rng, 10);
        let mut bases = Vec::new();
        let mut last = f64::INFINITY;
        for l in 0..4 {
            bases.push(ConceptBasis {
                concept_id: l,
                basis: orthonormal(&mut rng, 10, 2),
                captured_variance: 1.0,
                mean: None,
            });
            let space = build_space(bases.clone(), 10, 1e8).unwrap();
            let g = global_relevance(&space, &head(w.clone())).unwrap();
            let residual = g.weight_decomposition.components[space.n_concepts()].norm_squared();
            assert!(residual <= last + 1e-9, "{residual} > {last}");
            last = residual;
        }
    }
}

#[test]
fn assignment_ignores_the_scale_of_phi() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let space = random_space(&mut rng, 8);
        let phi = gaussian_vec(&mut rng, 8);
        let a = assign_segment(phi.as_slice(), &space).unwrap();
        for k in [1e-3, 0.5, 7.0, 1e4] {
            assert_eq!(assign_segment((&phi * k).as_slice(), &space).unwrap(), a);
        }
    }
}

#[test]
fn completeness_equals_the_projection_onto_the_concept_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let space = random_space(&mut rng, 10);
        let w = gaussian_vec(&mut rng, 10);
        let eta = global_relevance(&space, &head(w.clone()))
            .unwrap()
            .completeness;
        // Least-squares projection onto the concept columns, independent of Q.
        let k = space.full.ncols() - space.complement.ncols();
        let c = space.full.columns(0, k).into_owned();
        let x = c.clone().svd(true, true).solve(&w, 1e-14).unwrap();
        let proj = &c * x;
        let oracle = proj.norm_squared() / w.norm_squared();
        assert!((eta - oracle).abs() < 1e-9, "{eta} vs {oracle}");
    }
}

#[test]
fn planted_three_dimensional_cluster_keeps_three_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = orthonormal(&mut rng, 16, 3);
    let coords = gaussian(&mut rng, 3, 200);
    let noise = gaussian(&mut rng, 16, 200) * 1e-3;
    let members = (&u * coords + noise).transpose();
    let b = fit_basis(0, &members, 0.8).unwrap();
    assert_eq!(b.dim(), 3);
    let overlap = (u.transpose() * &b.basis).svd(false, false).singular_values;
    assert!(overlap.iter().all(|s| *s > 0.999), "{overlap}");
}

#[test]
fn built_spaces_respect_the_condition_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cap in [5.0, 100.0, 1e4] {
        for _ in 0..30 {
            let bases = (0..4)
                .map(|l| ConceptBasis {
                    concept_id: l,
                    basis: orthonormal(&mut rng, 10, 3),
                    captured_variance: 1.0,
                    mean: None,
                })
                .collect();
            let space = build_space(bases, 10, cap).unwrap();
            assert!(space.condition <= cap, "{} > {cap}", space.condition);
            assert_eq!(space.n_concepts(), 4);
            assert!(space.concept_dims().iter().all(|d| *d >= 1));
        }
    }
}

#[test]
fn orthogonal_blocks_split_phi_into_squared_shares() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let space = orthogonal_space(&mut rng, 9, &[2, 3, 1]);
    let phi = gaussian_vec(&mut rng, 9);
    let dec = decompose(phi.as_slice(), &space).unwrap();
    let a = activation_scores(&dec, phi.as_slice()).unwrap();
    assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relevance_sums_to_the_logit_without_bias(seed in any::<u64>(), dim in 3usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_space(&mut rng, dim);
        let phi = gaussian_vec(&mut rng, dim);
        let w = gaussian_vec(&mut rng, dim);
        let dec = decompose(phi.as_slice(), &space).unwrap();
        let r = local_relevance(&dec, &head(w.clone())).unwrap();
        prop_assert!((r.iter().sum::<f64>() - phi.dot(&w)).abs() <= 1e-9 * phi.norm() * w.norm());
        prop_assert!((dec.reconstruct() - &phi).norm() <= 1e-9 * phi.norm());
    }
}
