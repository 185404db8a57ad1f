use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use tsrobust::autocov::{build_toeplitz, conditional_params, model_implied_autocov};
use tsrobust::model::{causal_order, is_acyclic, stack_full_matrix, CausalModel, StructureSignature, TemporalEdge};
use tsrobust::scoring::obs_equivalent;
use tsrobust::sp::decompose_conditional;
use tsrobust::synth::{random_model, simulate, ModelGenConfig};
use tsrobust::{fit, signature_of, FitConfig};

fn brute_force_acyclic(a0: &DMatrix<f64>) -> bool {
    let n = a0.nrows();
    (0..n).permutations(n).any(|order| {
        let mut pos = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        (0..n).all(|k| (0..n).all(|j| k == j || a0[(k, j)] == 0.0 || pos[k] < pos[j]))
    })
}

fn support_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop::bool::weighted(0.35), n * n).prop_map(move |bits| {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else if bits[i * n + j] { 0.5 } else { 0.0 })
    })
}

fn small_signature() -> impl Strategy<Value = StructureSignature> {
    // random DAG on 3 nodes via a random order and edge subset, plus lagged edges
    (Just(vec![0usize, 1, 2]).prop_shuffle(), prop::collection::vec(any::<bool>(), 3), prop::collection::vec(prop::bool::weighted(0.2), 9))
        .prop_map(|(order, contemp, temporal)| {
            let pairs = [(0, 1), (0, 2), (1, 2)];
            let c = pairs
                .iter()
                .zip(&contemp)
                .filter(|(_, &on)| on)
                .map(|(&(a, b), _)| (order[a], order[b]));
            let t = temporal
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(i, _)| TemporalEdge { cause: i / 3, effect: i % 3, lag: 1 });
            StructureSignature::new(3, 1, c, t).unwrap()
        })
}

fn generated(n: usize, p: usize, seed: u64) -> CausalModel {
    random_model(&ModelGenConfig::new(n, p, 0.5, seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn acyclicity_matches_brute_force(a0 in (1usize..=5).prop_flat_map(support_matrix)) {
        let expected = brute_force_acyclic(&a0);
        prop_assert_eq!(is_acyclic(&a0).unwrap(), expected);
        if let Some(order) = causal_order(&a0).unwrap() {
            prop_assert!(expected);
            let mut pos = vec![0; a0.nrows()];
            for (i, &v) in order.iter().enumerate() {
                pos[v] = i;
            }
            for k in 0..a0.nrows() {
                for j in 0..a0.nrows() {
                    if k != j && a0[(k, j)] != 0.0 {
                        prop_assert!(pos[k] < pos[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn equivalence_is_an_equivalence_relation(a in small_signature(), b in small_signature(), c in small_signature()) {
        prop_assert!(obs_equivalent(&a, &a).unwrap());
        let ab = obs_equivalent(&a, &b).unwrap();
        prop_assert_eq!(ab, obs_equivalent(&b, &a).unwrap());
        if ab && obs_equivalent(&b, &c).unwrap() {
            prop_assert!(obs_equivalent(&a, &c).unwrap());
        }
        if ab {
            prop_assert_eq!(a.temporal(), b.temporal());
            prop_assert_eq!(a.edge_count(), b.edge_count());
        }
    }

    #[test]
    fn signature_ignores_sub_tolerance_noise(seed in any::<u64>(), noise in prop::collection::vec(-1.0f64..1.0, 18)) {
        let m = generated(3, 2, seed);
        let tol = 1e-6;
        let order = causal_order(m.a0()).unwrap().unwrap();
        let mut a0 = m.a0().clone();
        for (a, &row) in order.iter().enumerate() {
            for (b, &col) in order.iter().enumerate() {
                if a < b && a0[(row, col)] == 0.0 {
                    a0[(row, col)] = 0.5 * tol * noise[a * 3 + b];
                }
            }
        }
        let lags: Vec<DMatrix<f64>> = m.lags().iter().enumerate().map(|(k, l)| {
            l.map_with_location(|i, j, v| if v == 0.0 { 0.5 * tol * noise[9 * k + 3 * i + j] } else { v })
        }).collect();
        let noisy = CausalModel::new(a0, lags, m.d0().clone(), None).unwrap();
        prop_assert_eq!(signature_of(&noisy, tol), signature_of(&m, tol));
        prop_assert_eq!(signature_of(&noisy, tol), signature_of(&m, 0.0));
    }

    #[test]
    fn stacked_matrix_has_unit_determinant(seed in any::<u64>(), p in 1usize..=2, extra in 0usize..4) {
        let m = generated(3, p, seed);
        let s = stack_full_matrix(&m, p + 1 + extra).unwrap();
        prop_assert!((s.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_moments_round_trip(seed in any::<u64>(), p in 1usize..=2) {
        let m = generated(3, p, seed);
        let acs = model_implied_autocov(&m, p).unwrap();
        let params = conditional_params(&acs, p).unwrap();
        let order = causal_order(m.a0()).unwrap().unwrap();
        let back = decompose_conditional(&params, &order, None).unwrap();
        for (x, y) in back.coefficient_stack().iter().zip(m.coefficient_stack()) {
            prop_assert!((x - y).amax() < 1e-8);
        }
        prop_assert!((back.d0() - m.d0()).amax() < 1e-8);
    }

    #[test]
    fn conditioning_never_increases_variance(seed in any::<u64>(), p in 1usize..=2) {
        let m = generated(3, p, seed);
        let acs = model_implied_autocov(&m, p).unwrap();
        let params = conditional_params(&acs, p).unwrap();
        let gap = acs.block(0) - &params.gamma0;
        prop_assert!(gap.symmetric_eigenvalues().min() > -1e-10);
        prop_assert!(params.gamma0.symmetric_eigenvalues().min() > 0.0);
        let t = build_toeplitz(&acs, p).unwrap();
        prop_assert!((&t - t.transpose()).amax() == 0.0);
        prop_assert!(acs.block(0).symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn raising_alpha_never_adds_edges(seed in any::<u64>()) {
        let m = generated(3, 1, seed);
        let data = simulate(&m, 300, 100, seed ^ 1).unwrap();
        let mut last = usize::MAX;
        for alpha in [0.5, 0.8, 0.95, 0.99, 0.999] {
            let res = fit(&data, &FitConfig::new(1, alpha)).unwrap();
            prop_assert!(res.sparsity <= last);
            let counts: Vec<usize> = res.signatures().iter().map(|s| s.edge_count()).collect();
            prop_assert!(counts.iter().all(|&c| c == res.sparsity));
            prop_assert!(res.models.iter().all(|m| is_acyclic(m.a0()).unwrap()));
            last = res.sparsity;
        }
    }

    #[test]
    fn model_json_round_trip_is_lossless(seed in any::<u64>(), p in 0usize..=2) {
        let m = if p == 0 {
            CausalModel::independent_noise(DVector::from_vec(vec![0.3, 0.7]), 0, None).unwrap()
        } else {
            generated(3, p, seed)
        };
        prop_assert_eq!(CausalModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
