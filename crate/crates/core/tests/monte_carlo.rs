use nalgebra::{dmatrix, DMatrix, DVector};

use tsrobust::autocov::{estimate_autocov, model_implied_autocov};
use tsrobust::model::{signature_of, CausalModel, StructureSignature, TemporalEdge};
use tsrobust::robustness::compute_robustness;
use tsrobust::sp::{fit, prune_edges, refit_on_structure, FitConfig, JointMoments, Regressor};
use tsrobust::synth::{child_seed, simulate, SurrogateConfig, SurrogateSampler};
use tsrobust::{AutocovEstimator, DEFAULT_ZERO_TOL};

fn ar1(phi: f64) -> CausalModel {
    CausalModel::new(dmatrix![1.0], vec![dmatrix![-phi]], DVector::from_element(1, 1.0), None).unwrap()
}

fn two_var_model(contemp: f64, cross_lag: f64) -> CausalModel {
    // x1 -> x2 contemporaneously, both AR(0.5), optional x1(t-1) -> x2
    CausalModel::new(
        dmatrix![1.0, -contemp; 0.0, 1.0],
        vec![dmatrix![-0.5, -cross_lag; 0.0, -0.5]],
        DVector::from_vec(vec![0.4, 0.35]),
        None,
    )
    .unwrap()
}

#[test]
fn iid_autocovariance_is_identity_and_zero() {
    let m = CausalModel::independent_noise(DVector::from_vec(vec![1.0, 1.0]), 1, None).unwrap();
    let data = simulate(&m, 100_000, 100, 11).unwrap();
    let acs = estimate_autocov(&data, 1).unwrap();
    assert!((acs.block(0) - DMatrix::identity(2, 2)).amax() < 0.02);
    assert!(acs.block(1).amax() < 0.02);
}

#[test]
fn ar1_autocovariance_within_three_standard_errors() {
    let phi: f64 = 0.5;
    let t = 100_000;
    let gamma = |k: i64| phi.powi(k.unsigned_abs() as i32) / (1.0 - phi * phi);
    let data = simulate(&ar1(phi), t, 200, 5).unwrap();
    let acs = estimate_autocov(&data, 4).unwrap();
    for tau in 0..=4i64 {
        // Bartlett's large-sample variance of the lag-tau estimate
        let var: f64 = (-200..=200).map(|k| gamma(k).powi(2) + gamma(k + tau) * gamma(k - tau)).sum::<f64>() / t as f64;
        let err = (acs.block(tau as usize)[(0, 0)] - gamma(tau)).abs();
        assert!(err < 3.0 * var.sqrt(), "lag {tau}: error {err} vs se {}", var.sqrt());
    }
}

#[test]
fn autocovariance_error_shrinks_like_root_t() {
    let m = two_var_model(0.6, 0.3);
    let exact = model_implied_autocov(&m, 2).unwrap();
    let rms = |t: usize, reps: u64| {
        let mut sq = 0.0;
        let mut count = 0.0;
        for r in 0..reps {
            let data = simulate(&m, t, 200, child_seed(t as u64, r)).unwrap();
            let acs = estimate_autocov(&data, 2).unwrap();
            for tau in 0..=2 {
                sq += (acs.block(tau) - exact.block(tau)).norm_squared();
                count += 4.0;
            }
        }
        (sq / count).sqrt()
    };
    let e3 = rms(1_000, 200);
    let e4 = rms(10_000, 60);
    let e5 = rms(100_000, 20);
    for ratio in [e4 / e3, e5 / e4] {
        assert!((0.2..=0.5).contains(&ratio), "ratios {} {}", e4 / e3, e5 / e4);
    }
}

#[test]
fn iid_data_fits_the_empty_structure() {
    // five null slots tested at 1% each: expected empty rate 0.99^5
    let m = CausalModel::independent_noise(DVector::from_vec(vec![0.4, 0.35]), 1, None).unwrap();
    let trials = 300;
    let mut empty = 0;
    for s in 0..trials {
        let data = simulate(&m, 10_000, 100, child_seed(21, s)).unwrap();
        let res = fit(&data, &FitConfig::new(1, 0.99)).unwrap();
        if res.models.len() == 1 && res.sparsity == 0 {
            empty += 1;
        }
    }
    let expected = 0.99f64.powi(5);
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    let rate = empty as f64 / trials as f64;
    assert!(rate >= expected - 3.0 * se, "empty rate {rate}");
}

#[test]
fn chain_fits_both_orientations() {
    let m = CausalModel::new(
        dmatrix![1.0, -0.8; 0.0, 1.0],
        vec![],
        DVector::from_vec(vec![0.4, 0.35]),
        None,
    )
    .unwrap();
    let forward = StructureSignature::new(2, 0, [(0, 1)], []).unwrap();
    let backward = StructureSignature::new(2, 0, [(1, 0)], []).unwrap();
    let data = simulate(&m, 10_000, 100, 8).unwrap();
    let res = fit(&data, &FitConfig::new(0, 0.95)).unwrap();
    assert_eq!(res.permutation_log.len(), 2);
    let sigs = res.signatures();
    assert_eq!(sigs.len(), 2);
    assert!(sigs.contains(&forward) && sigs.contains(&backward));

}

fn cross_lag_retention(model: &CausalModel, sims: u64, seed: u64) -> f64 {
    let candidates = [Regressor::new(0, 0), Regressor::new(0, 1), Regressor::new(1, 1)];
    let mut kept = 0;
    for s in 0..sims {
        let data = simulate(model, 10_000, 100, child_seed(seed, s)).unwrap();
        let acs = estimate_autocov(&data, 1).unwrap();
        let moments = JointMoments::new(&acs, 1, data.len() - 1).unwrap();
        let out = prune_edges(&moments, 1, &candidates, 0.95).unwrap();
        if out.contains(&Regressor::new(0, 1)) {
            kept += 1;
        }
    }
    kept as f64 / sims as f64
}

#[test]
fn pruning_false_retention_is_calibrated() {
    let rate = cross_lag_retention(&two_var_model(0.6, 0.0), 1000, 31);
    assert!((0.03..=0.07).contains(&rate), "false retention {rate}");
}

#[test]
fn pruning_keeps_strong_edges() {
    let rate = cross_lag_retention(&two_var_model(0.6, 0.8), 200, 32);
    assert!(rate > 0.99, "retention {rate}");
}

#[test]
fn refit_on_true_support_is_consistent() {
    let m = CausalModel::new(
        dmatrix![1.0, -0.6, 0.0; 0.0, 1.0, 0.0; 0.0, 0.5, 1.0],
        vec![dmatrix![-0.5, 0.0, 0.0; 0.0, -0.4, 0.0; 0.0, 0.7, 0.0]],
        DVector::from_vec(vec![0.35, 0.4, 0.3]),
        None,
    )
    .unwrap();
    let data = simulate(&m, 100_000, 200, 41).unwrap();
    let refit = refit_on_structure(&data, &signature_of(&m, 0.0), 1).unwrap();
    for (a, b) in refit.coefficient_stack().iter().zip(m.coefficient_stack()) {
        assert!((a - b).amax() < 0.05);
    }
    assert!((refit.d0() - m.d0()).amax() < 0.05);
}

#[test]
fn refit_reproduces_fit_coefficients() {
    let m = two_var_model(0.6, 0.3);
    let data = simulate(&m, 2_000, 100, 42).unwrap();
    let res = fit(&data, &FitConfig::new(1, 0.95)).unwrap();
    for model in &res.models {
        let refit = refit_on_structure(&data, &signature_of(model, DEFAULT_ZERO_TOL), 1).unwrap();
        for (a, b) in refit.coefficient_stack().iter().zip(model.coefficient_stack()) {
            assert!((a - b).amax() < 1e-8);
        }
    }
}

#[test]
fn surrogates_are_seed_deterministic() {
    let m = two_var_model(0.6, 0.3);
    let data = simulate(&m, 1_000, 100, 3).unwrap();
    let sampler = SurrogateSampler::from_data(&data, 1, AutocovEstimator::PerLag).unwrap();
    let a = sampler.sample(500, 100, 77).unwrap();
    let b = sampler.sample(500, 100, 77).unwrap();
    let c = sampler.sample(500, 100, 78).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.labels(), data.labels());
}

#[test]
fn robustness_is_deterministic_across_thread_counts() {
    let m = two_var_model(0.6, 0.3);
    let data = simulate(&m, 500, 100, 4).unwrap();
    let run = || compute_robustness(&data, &FitConfig::default(), 40, &SurrogateConfig::default(), 99).unwrap();
    let many = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    assert_eq!(many.outcomes, single.outcomes);
    assert_eq!(many.structures.len(), single.structures.len());
    for (a, b) in many.structures.iter().zip(&single.structures) {
        assert_eq!(a.signature, b.signature);
        assert_eq!(a.count, b.count);
        assert_eq!(a.stats, b.stats);
    }
}

#[test]
fn strong_model_is_robust() {
    let m = two_var_model(0.8, 0.8);
    let truth = signature_of(&m, 0.0);
    let data = simulate(&m, 2_000, 100, 5).unwrap();
    let report = compute_robustness(&data, &FitConfig::new(1, 0.99), 100, &SurrogateConfig::default(), 6).unwrap();
    let best = report.best().unwrap();
    assert!(tsrobust::obs_equivalent(&best.signature, &truth).unwrap());
    assert!(best.robustness >= 50.0);
    let counted: usize = report.structures.iter().map(|s| s.count).sum();
    assert!(counted >= report.replicates - report.failures);
    let lagged = TemporalEdge { cause: 0, effect: 1, lag: 1 };
    assert!(best.signature.temporal().contains(&lagged));
    let std = best.stats.std.as_ref().unwrap();
    assert!(std[1][(0, 1)] > 0.0 && std[1][(0, 1)] < 0.1);
}
