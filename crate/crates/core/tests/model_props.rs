mod common;

use std::collections::BTreeSet;

use common::*;
use ct_factor::model::*;
use ct_factor::numerics::RngState;
use proptest::prelude::*;

#[test]
fn implied_covariance_matches_triple_loop() {
    for seed in 0..200 {
        let mut rng = RngState::new(seed);
        let theta = random_theta(6, 2, &mut rng);
        let sigma = implied_covariance(&theta);
        let (l, f, w) = (theta.lambda(), theta.phi(), theta.omega());
        for i in 0..6 {
            for j in 0..6 {
                let mut v = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        v += l[(i, a)] * f.get(a, b) * l[(j, b)];
                    }
                }
                if i == j {
                    v += w[i];
                }
                assert!((sigma.get(i, j) - v).abs() <= 1e-12, "seed {seed} entry ({i},{j})");
            }
        }
    }
}

#[test]
fn implied_correlation_matches_per_entry_normalization() {
    for seed in 0..200 {
        let mut rng = RngState::new(seed);
        let theta = random_theta(7, 3, &mut rng);
        let sigma = implied_covariance(&theta);
        let rho = implied_correlation(&theta);
        for i in 0..7 {
            for j in 0..7 {
                let v = sigma.get(i, j) / (sigma.get(i, i) * sigma.get(j, j)).sqrt();
                assert!((rho.get(i, j) - v).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn edge_partition_matches_set_intersection() {
    for seed in 0..300 {
        let mut rng = RngState::new(seed);
        let s = random_structure(8, 3, 0.3, &mut rng);
        let parents: Vec<BTreeSet<usize>> = s.parent_sets().into_iter().map(|v| v.into_iter().collect()).collect();
        let mut e0 = Vec::new();
        let mut e0c = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..8 {
                if parents[i].intersection(&parents[j]).next().is_some() {
                    e0.push((i, j));
                } else {
                    e0c.push((i, j));
                }
            }
        }
        let part = edge_partition(&s);
        assert_eq!(part.e0, e0);
        assert_eq!(part.e0c, e0c);
    }
}

#[test]
fn constant_loading_cluster_satisfies_separation_inequality() {
    // standardized loading 0.7 and factor correlation 0.75 * 0.7
    let theta = cluster_theta(3, 5, 0.7, 0.75 * 0.7);
    let rho = implied_correlation(&theta);
    let part = edge_partition(&theta.structure());
    let min_within = part.e0.iter().map(|&(i, j)| rho.get(i, j).abs()).fold(f64::INFINITY, f64::min);
    let max_cross = part.e0c.iter().map(|&(i, j)| rho.get(i, j).abs()).fold(0.0, f64::max);
    assert!((min_within - 0.49).abs() < 1e-12);
    assert!((max_cross - 0.49 * 0.525).abs() < 1e-12);
    assert!(max_cross < min_within);
    let rep = thresholdability(&theta);
    assert!(rep.thresholdable);
    assert!(general_sufficient_check(&theta));
}

#[test]
fn raising_factor_correlation_breaks_thresholdability() {
    use nalgebra::{DMatrix, DVector};
    use ct_factor::numerics::SymMatrix;
    let build = |phi12: f64| {
        let lambda = DMatrix::from_row_slice(4, 2, &[0.9, 0.0, 0.3, 0.0, 0.0, 0.9, 0.0, 0.9]);
        let phi = SymMatrix::from_rows(&[vec![1.0, phi12], vec![phi12, 1.0]]).unwrap();
        let omega = DVector::from_iterator(4, [0.19, 0.91, 0.19, 0.19]);
        FactorParams::new(lambda, phi, omega).unwrap()
    };
    let mut phi12 = 0.0;
    let crossing = loop {
        let theta = build(phi12);
        let rho = implied_correlation(&theta);
        let within = rho.get(0, 1).abs().min(rho.get(2, 3).abs());
        let cross = [(0, 2), (0, 3), (1, 2), (1, 3)].iter().map(|&(i, j)| rho.get(i, j).abs()).fold(0.0, f64::max);
        if cross > within {
            break theta;
        }
        assert!(thresholdability(&theta).thresholdable, "phi12 = {phi12}");
        phi12 += 0.01;
        assert!(phi12 < 1.0);
    };
    assert!(!thresholdability(&crossing).thresholdable);
    assert!(!general_sufficient_check(&crossing));
}

#[test]
fn independent_cluster_has_all_children_unique() {
    for (d, c) in [(1, 3), (3, 5), (10, 15)] {
        let s = Structure::independent_cluster(d, c);
        let u = unique_children(&s);
        assert!(u.ucc_holds);
        assert_eq!(u.sets.iter().map(Vec::len).sum::<usize>(), d * c);
    }
}

#[test]
fn ucc_supports_with_generic_values_are_rotationally_unique() {
    for seed in 0..200 {
        let mut rng = RngState::new(seed);
        let d = 2 + (seed as usize % 3);
        let p = 2 * d + 4;
        let s = random_structure(p, d, 0.25, &mut rng);
        if !unique_children(&s).ucc_holds {
            continue;
        }
        let theta = random_theta_on(&s, &mut rng);
        let rep = rotational_uniqueness_check(theta.lambda());
        assert!(rep.condition1, "seed {seed}");
        assert!(rep.condition2, "seed {seed}");
    }
}

#[test]
fn identity_phi_is_thresholdable() {
    for seed in 0..200 {
        let mut rng = RngState::new(seed);
        let s = random_structure(8, 3, 0.2, &mut rng);
        let t = random_theta_on(&s, &mut rng);
        let t = FactorParams::new(t.lambda().clone(), ct_factor::numerics::SymMatrix::identity(3), t.omega().clone()).unwrap();
        assert!(thresholdability(&t).thresholdable);
        assert!(general_sufficient_check(&t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn correlation_has_unit_diagonal_and_bounded_entries(seed in any::<u64>(), p in 2usize..10, d in 1usize..4) {
        prop_assume!(p >= d);
        let mut rng = RngState::new(seed);
        let rho = implied_correlation(&random_theta(p, d, &mut rng));
        for i in 0..p {
            prop_assert!((rho.get(i, i) - 1.0).abs() <= 1e-12);
            for j in 0..p {
                prop_assert!(rho.get(i, j).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn general_sufficient_agrees_with_thresholdability(seed in any::<u64>(), p in 2usize..=10, d in 1usize..=3) {
        prop_assume!(p >= d);
        let mut rng = RngState::new(seed);
        let theta = random_theta(p, d, &mut rng);
        prop_assert_eq!(general_sufficient_check(&theta), thresholdability(&theta).thresholdable);
    }

    #[test]
    fn consistency_bound_monotone(n in 5u64..5000, p in 2u64..500, gamma in 0.01f64..1.9) {
        // clamped: for small γ the raw expression first rises in n, but only while it exceeds 1
        let eta = |n, p| consistency_bound(n, p, gamma, 1.0).unwrap();
        prop_assert!(eta(n + 1, p) <= eta(n, p));
        prop_assert!(eta(n, p + 1) >= eta(n, p));
    }
}
