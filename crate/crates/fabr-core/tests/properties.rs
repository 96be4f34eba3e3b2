//! Property tests for the invariants that hold across the whole input space:
//! persistence round trips, the push-through identity, grid solves against
//! direct factorization, and the sketch bounds.

use ndarray::Array2;
use proptest::prelude::*;

use fabr_core::data_io::{load_matrix, save_matrix, DenseMatrix};
use fabr_core::feature_gen::{generate_block, generate_full, Activation, FeaturePlan};
use fabr_core::linalg;
use fabr_core::lowrank_solver::{fold_block, init_state, SketchState};
use fabr_core::ridge_spectral::{
    classify, multi_z_apply, sym_eig, ResolventMode, RidgeGrid, EIG_CLIP_REL,
};
use fabr_core::seeding;

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut buf = vec![0.0; rows * cols];
    seeding::fill_gaussian(&mut seeding::stream_rng(seed, 0, 0), 1.0, &mut buf);
    Array2::from_shape_vec((rows, cols), buf).unwrap()
}

fn spectral_norm(a: &Array2<f64>) -> f64 {
    let sym = 0.5 * (a + &a.t());
    let (values, _) = linalg::sym_eig_desc(sym.view()).unwrap();
    values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fabm_round_trip_is_bitwise(rows in 0usize..6, cols in 0usize..6, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fabm");
        let m = DenseMatrix::new(gaussian_matrix(rows, cols, seed));
        save_matrix(&m, &path).unwrap();
        let back = load_matrix(&path).unwrap();
        prop_assert_eq!(back.data.dim(), (rows, cols));
        for (a, b) in m.data.iter().zip(back.data.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn push_through_identity(n in 1usize..12, p in 1usize..12, seed in 0u64..500, zi in 0usize..3) {
        let z = [0.05, 1.0, 50.0][zi];
        let s = gaussian_matrix(n, p, seed);

        // (S^T S / n + zI)^{-1} S^T
        let mut left_a = linalg::matmul(s.view(), true, s.view(), false);
        left_a.mapv_inplace(|v| v / n as f64);
        for i in 0..p {
            left_a[[i, i]] += z;
        }
        let st = s.t().as_standard_layout().into_owned();
        let left = linalg::solve_general(left_a.view(), st.view()).unwrap();

        // S^T (S S^T / n + zI)^{-1}
        let mut right_a = linalg::matmul(s.view(), false, s.view(), true);
        right_a.mapv_inplace(|v| v / n as f64);
        for i in 0..n {
            right_a[[i, i]] += z;
        }
        let eye = Array2::eye(n);
        let inv = linalg::solve_general(right_a.view(), eye.view()).unwrap();
        let right = linalg::matmul(s.view(), true, inv.view(), false);

        for (a, b) in left.iter().zip(right.iter()) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn grid_solve_matches_direct_factorization(
        n in 2usize..10,
        p in 1usize..14,
        k in 1usize..3,
        seed in 0u64..300,
    ) {
        let s = gaussian_matrix(n, p, seed);
        let y = gaussian_matrix(n, k, seed + 1);
        let grid = RidgeGrid::new(vec![0.1, 1.0, 10.0]).unwrap();
        let mut psi_n = linalg::matmul(s.view(), false, s.view(), true);
        psi_n.mapv_inplace(|v| v / n as f64);
        let eig = sym_eig(psi_n.view()).unwrap().truncate_null(EIG_CLIP_REL);
        let q = multi_z_apply(&eig, y.view(), &grid, n, ResolventMode::Exact).unwrap();
        for (zi, &z) in grid.values().iter().enumerate() {
            let mut a = psi_n.clone();
            for i in 0..n {
                a[[i, i]] += z;
            }
            let mut rhs = y.clone();
            rhs.mapv_inplace(|v| v / n as f64);
            let direct = linalg::solve_general(a.view(), rhs.view()).unwrap();
            for (got, want) in q[zi].iter().zip(direct.iter()) {
                prop_assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn block_concatenation_reproduces_full_generation(
        p in 1usize..20,
        p1 in 1usize..8,
        d in 1usize..5,
        n in 1usize..6,
        seed in 0u64..200,
    ) {
        prop_assume!(p >= p1);
        let plan = FeaturePlan {
            master_seed: seed,
            total_features: p,
            block_width: p1,
            activation: Activation::Tanh,
            weight_scale: 0.7,
            input_dim: d,
        };
        let x = gaussian_matrix(n, d, seed + 7);
        let full = generate_full(x.view(), &plan).unwrap();
        prop_assert_eq!(full.dim(), (n, p));
        let mut offset = 0;
        for kb in 0..plan.block_count() {
            let block = generate_block(x.view(), &plan, kb).unwrap();
            for j in 0..block.values.ncols() {
                for i in 0..n {
                    prop_assert_eq!(
                        block.values[[i, j]].to_bits(),
                        full[[i, offset + j]].to_bits()
                    );
                }
            }
            offset += block.values.ncols();
        }
    }

    #[test]
    fn classifier_shift_invariance(rows in 1usize..8, k in 2usize..5, seed in 0u64..200, shift in -5.0f64..5.0) {
        let scores = gaussian_matrix(rows, k, seed);
        let shifted = scores.mapv(|v| v + shift);
        let means = vec![0.25; k];
        prop_assert_eq!(classify(scores.view(), &means), classify(shifted.view(), &means));
    }

    #[test]
    fn sketch_error_stays_within_tracked_bound(
        n in 4usize..10,
        p1 in 1usize..4,
        blocks in 2usize..5,
        nu in 1usize..5,
        seed in 0u64..200,
    ) {
        let mut psi = Array2::<f64>::zeros((n, n));
        let mut state: Option<SketchState> = None;
        for b in 0..blocks {
            let block = fabr_core::feature_gen::FeatureBlock {
                index: b,
                values: gaussian_matrix(n, p1, seed * 31 + b as u64),
            };
            linalg::syrk_acc(&mut psi, block.values.view());
            match state.as_mut() {
                None => state = Some(init_state(&block, nu).unwrap()),
                Some(s) => fold_block(s, &block, nu).unwrap(),
            }
        }
        let state = state.unwrap();
        let lambda_max = spectral_norm(&psi);
        let diff = &psi - &state.reconstruct_gram();
        prop_assert!(spectral_norm(&diff) <= state.bound_accumulator + 1e-8 * lambda_max.max(1.0));
        let (diff_values, _) = linalg::sym_eig_desc(diff.view()).unwrap();
        let min_eig = diff_values.last().copied().unwrap_or(0.0);
        prop_assert!(min_eig >= -1e-8 * lambda_max.max(1.0));
    }
}
