use pistm_surrogate::gp::{gp_predict, kernel, log_marginal_likelihood, GpBundle, GpBundleConfig};
use pistm_surrogate::rom::{LatentRow, LatentTable};
use pistm_surrogate::{fit_gp, GpFitConfig, GpHyper, GpRegressor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use pistm_surrogate::testing::{
    gp_fixture, gp_interpolation_error, gp_oracle_deviation, gp_prior_sample, gp_recovered_lengthscales,
};

fn hyper(s2: f64, l: [f64; 2], n2: f64) -> GpHyper {
    GpHyper {
        signal_variance: s2,
        lengthscales: l,
        noise_variance: n2,
    }
}

#[test]
fn matches_dense_inverse_oracle_up_to_ten_points() {
    for n in 1..=10 {
        for seed in 0..5u64 {
            let gp = gp_fixture(n, 100 * n as u64 + seed);
            let dev = gp_oracle_deviation(&gp);
            assert!(dev < 1e-8, "n={n} seed={seed}: deviation {dev:e}");
        }
    }
}

#[test]
fn single_zero_target_likelihood() {
    let gp = GpRegressor::new(vec![[0.3, 0.3]], vec![0.0], hyper(2.0, [1.0, 1.0], 0.5)).unwrap();
    let l11 = gp.cholesky_factor().at(0, 0);
    let expect = -l11.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((log_marginal_likelihood(&gp) - expect).abs() < 1e-14);
    assert!((l11 - 2.5f64.sqrt()).abs() < 1e-14);
}

#[test]
fn hand_two_point_posterior() {
    let h = hyper(1.0, [1.0, 1.0], 0.01);
    let y = [1.0, -0.5];
    let gp = GpRegressor::new(vec![[0.0, 0.0], [0.5, 0.0]], y.to_vec(), h).unwrap();
    assert_eq!(gp.jitter(), 0.0);
    // K = [[a, b], [b, a]] with a = 1.01, b = exp(−0.125); query midway.
    let (a, b) = (1.01, (-0.125f64).exp());
    let ks = (-1.0f64 / 32.0).exp();
    let det = a * a - b * b;
    let alpha = [(a * y[0] - b * y[1]) / det, (a * y[1] - b * y[0]) / det];
    let mean = ks * (alpha[0] + alpha[1]);
    let var = 1.0 - ks * ks * (2.0 * a - 2.0 * b) / det;
    let (m, v) = gp_predict(&gp, &[0.25, 0.0]);
    assert!((m - mean).abs() < 1e-10, "{m} vs {mean}");
    assert!((v - var).abs() < 1e-10, "{v} vs {var}");
}

#[test]
fn interpolates_training_points_without_noise() {
    assert!(gp_interpolation_error() < 1e-6);
}

#[test]
fn reverts_to_prior_far_from_data() {
    let gp = gp_fixture(6, 9);
    let l = gp.hyper().lengthscales;
    let far = [20.0 * l[0].max(l[1]), 20.0 * l[0].max(l[1])];
    let (m, v) = gp_predict(&gp, &far);
    assert!(m.abs() < 1e-6);
    assert!((v - gp.hyper().signal_variance).abs() < 1e-6);
}

#[test]
fn variance_is_smallest_at_training_points() {
    let h = hyper(1.0, [0.2, 0.2], 1e-6);
    let gp = GpRegressor::new(vec![[0.0, 0.5], [1.0, 0.5]], vec![0.3, -0.2], h).unwrap();
    let (_, mid) = gp_predict(&gp, &[0.5, 0.5]);
    for p in gp.inputs() {
        assert!(gp_predict(&gp, p).1 <= mid);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..20 {
        let gp = gp_fixture(7, 1000 + seed);
        let analytic = gp.lml_gradient().unwrap();
        let base = gp.hyper().to_log();
        for i in 0..4 {
            let eval = |d: f64| {
                let mut p = base;
                p[i] += d;
                GpRegressor::new(gp.inputs().to_vec(), gp.targets().to_vec(), GpHyper::from_log(p))
                    .unwrap()
                    .log_marginal_likelihood()
            };
            let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            let scale = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!((analytic[i] - fd).abs() / scale < 1e-4, "seed {seed} θ{i}: {} vs {fd}", analytic[i]);
        }
    }
}

#[test]
fn recovers_lengthscale_of_gp_prior_sample() {
    let l = gp_recovered_lengthscales();
    assert!(l.iter().all(|v| (0.1..=0.4).contains(v)), "recovered lengthscales {l:?}");
}

#[test]
fn zero_targets_give_null_function() {
    let x: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 / 4.0, 0.5]).collect();
    let cfg = GpFitConfig::default();
    let gp = fit_gp(&x, &[0.0; 5], &cfg).unwrap();
    assert_eq!(gp_predict(&gp, &[0.33, 0.1]).0, 0.0);
    assert!(gp.hyper().signal_variance <= 1.01 * cfg.signal_variance_bounds.0);
}

#[test]
fn fit_is_deterministic_and_rejects_conflicts() {
    let (x, y) = gp_prior_sample(12, &hyper(1.0, [0.3, 0.3], 1e-3), 2);
    let cfg = GpFitConfig {
        seed: 4,
        ..GpFitConfig::default()
    };
    assert_eq!(fit_gp(&x, &y, &cfg).unwrap(), fit_gp(&x, &y, &cfg).unwrap());
    let mut xd = x.clone();
    xd[1] = xd[0];
    assert!(fit_gp(&xd, &y, &cfg).is_err());
    assert!(fit_gp(&x[..1], &y[..1], &cfg).is_err());
}

#[test]
fn bundle_reproduces_training_rows() {
    let mut rows = Vec::new();
    for (i, re) in [60.0, 120.0, 180.0, 240.0].into_iter().enumerate() {
        for t in 0..4i64 {
            let z = vec![
                (re / 100.0) + 0.1 * t as f64,
                (0.5 * t as f64 + i as f64).sin(),
            ];
            rows.push(LatentRow { re, t, z });
        }
    }
    let table = LatentTable { code_dim: 2, rows };
    let bundle = GpBundle::fit(&table, Some((50.0, 300.0)), &GpBundleConfig::default()).unwrap();
    for r in &table.rows {
        let p = pistm_surrogate::predict_bundle(&bundle, r.re, r.t).unwrap();
        for (a, b) in p.mean.iter().zip(&r.z) {
            assert!((a - b).abs() < 1e-4, "Re {} t {}: {a} vs {b}", r.re, r.t);
        }
        assert!(p.variance.iter().all(|&v| v >= 0.0));
        assert!(!p.extrapolated);
    }
    assert!(pistm_surrogate::predict_bundle(&bundle, 400.0, 1).unwrap().extrapolated);
    assert!(pistm_surrogate::predict_bundle(&bundle, 100.0, 9).is_err());

    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let back = GpBundle::load(dir.path()).unwrap();
    let a = pistm_surrogate::predict_bundle(&bundle, 150.0, 2).unwrap();
    let b = pistm_surrogate::predict_bundle(&back, 150.0, 2).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_symmetric(a in prop::array::uniform2(-3.0f64..3.0), b in prop::array::uniform2(-3.0f64..3.0),
                           s2 in 0.1f64..5.0, l0 in 0.05f64..3.0, l1 in 0.05f64..3.0) {
        let h = hyper(s2, [l0, l1], 1e-3);
        prop_assert_eq!(kernel(&a, &b, &h).unwrap(), kernel(&b, &a, &h).unwrap());
        prop_assert!((kernel(&a, &a, &h).unwrap() - s2).abs() < 1e-15);
    }

    #[test]
    fn predictions_ignore_row_order(seed in 0u64..1000, q in prop::array::uniform2(0.0f64..1.0)) {
        let gp = gp_fixture(8, seed);
        let mut idx: Vec<usize> = (0..8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for i in (1..8).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let x: Vec<[f64; 2]> = idx.iter().map(|&i| gp.inputs()[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| gp.targets()[i]).collect();
        let other = GpRegressor::new(x, y, *gp.hyper()).unwrap();
        let (m1, v1) = gp_predict(&gp, &q);
        let (m2, v2) = gp_predict(&other, &q);
        prop_assert!((m1 - m2).abs() < 1e-10);
        prop_assert!((v1 - v2).abs() < 1e-10);
        prop_assert!((gp.log_marginal_likelihood() - other.log_marginal_likelihood()).abs() < 1e-10);
    }

    #[test]
    fn variance_is_non_negative(seed in 0u64..1000, q in prop::array::uniform2(-1.0f64..2.0)) {
        let gp = gp_fixture(5, seed);
        prop_assert!(gp_predict(&gp, &q).1 >= 0.0);
    }
}
