use ftr_scatter::model::support_grid;
use ftr_scatter::{build_model, ftr_residual, hermiticity_residual, perturbation_library, random_ftr, ThetaStructure, C64};
use faer::Mat;
use proptest::prelude::*;

/// FTR catalogue entries with the model they act on and an admissible energy.
const FTR_ENTRIES: &[(&str, (usize, usize, usize), f64)] = &[
    ("V_TR", (1, 1, 1), 1.8),
    ("V1", (2, 2, 1), 1.8),
    ("V_TRS_M2", (2, 2, 1), 1.8),
    ("p2_V2", (1, 1, 2), 3.0),
    ("p2_V1_sigma3", (1, 1, 2), 3.0),
    ("M3_exchange", (3, 3, 1), 1.8),
    ("M3_nonexchange", (3, 3, 1), 1.8),
];

#[test]
fn catalogue_ftr_entries_commute_with_theta() {
    for &(name, (m, n, p), e) in FTR_ENTRIES {
        let model = build_model(m, n, p).unwrap();
        let v = perturbation_library(name, e, 1.0).unwrap();
        let grid = support_grid(1.0, 3.0, 10);
        let r = ftr_residual(&v, &model, &grid).unwrap();
        assert!(r <= 1e-12, "{name}: {r:e}");
        assert!(hermiticity_residual(&v, &grid) <= 1e-12, "{name}");
    }
}

#[test]
fn ntr_entry_breaks_theta() {
    let model = build_model(1, 1, 1).unwrap();
    let v = perturbation_library("V_NTR", 1.8, 1.0).unwrap();
    let grid = support_grid(1.0, 3.0, 10);
    assert!(ftr_residual(&v, &model, &grid).unwrap() > 1e-2);
    assert!(hermiticity_residual(&v, &grid) <= 1e-12);
}

#[test]
fn non_ftr_entry_is_hermitian() {
    let v = perturbation_library("p2_h_sigma3", 3.0, 1.0).unwrap();
    assert!(hermiticity_residual(&v, &support_grid(1.0, 3.0, 10)) <= 1e-12);
}

fn random_matrix(n: usize, k: usize, seed: &[f64]) -> Mat<C64> {
    Mat::from_fn(n, k, |i, j| {
        let t = seed[(i * k + j) % seed.len()];
        C64::new(t.sin() * (1.0 + i as f64), (t * 1.7 + j as f64).cos())
    })
}

proptest! {
    #[test]
    fn theta_squares_to_minus_one(m in 1usize..4, k in 1usize..4, seed in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let theta = ThetaStructure::new(&build_model(m, m, 1).unwrap()).unwrap();
        let a = random_matrix(theta.dim(), k, &seed);
        let twice = theta.apply_columns(&theta.apply_columns(&a));
        prop_assert_eq!(twice, -&a);
        let col: Vec<C64> = (0..theta.dim()).map(|i| a[(i, 0)]).collect();
        let v2 = theta.apply(&theta.apply(&col));
        prop_assert!(v2.iter().zip(&col).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn random_ftr_is_symmetric_and_hermitian(seed in any::<u64>(), m in 1usize..4) {
        let model = build_model(m, m, 1).unwrap();
        let env = perturbation_library("v1_scalar", 1.8, 1.0).unwrap();
        let v = random_ftr(seed, &model, &env).unwrap();
        let grid = support_grid(1.0, 3.0, 10);
        prop_assert!(ftr_residual(&v, &model, &grid).unwrap() <= 1e-12);
        prop_assert!(hermiticity_residual(&v, &grid) <= 1e-12);
    }
}
