//! Oracle checks shared by the crate's integration tests and the acceptance suite.

use pistm_core::linalg::cholesky;
use pistm_core::testing::{dense_inverse_log_det, finite_difference, relative_gradient_error, uniform, GradientCheck, FD_STEP};
use pistm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gp::{fit_gp, gp_predict, kernel, GpFitConfig, GpHyper, GpRegressor};
use crate::koopman::{loss_graph, LossWeights, PARAM_NAMES};
use crate::norm::FieldNormalizer;
use crate::rom::{ConvAutoencoder, RomConfig};
use crate::{KaeTrainConfig, KoopmanModel};

/// Gradient of the full Koopman loss (all four terms, non-unit weights) on a
/// small random model and random windows.
pub fn kae_gradient_checks(seed: u64) -> Vec<GradientCheck> {
    let (d, horizon) = (6, 3);
    let weights = LossWeights {
        identity: 1.0,
        forward: 0.7,
        backward: 1.3,
        consistency: 0.4,
    };
    let cfg = KaeTrainConfig {
        latent_dim: 3,
        hidden: 5,
        horizon,
        operator_init_noise: 0.3,
        seed,
        ..KaeTrainConfig::default()
    };
    let norm = FieldNormalizer::from_parts(vec![0.0; d], 1.0).expect("unit scale");
    let model = KoopmanModel::init(&[2, 3], norm, &cfg).expect("valid shapes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let mut params = model.params().to_vec();
    for p in params.iter_mut() {
        let noise = uniform(&mut rng, p.dims(), 0.1);
        p.add_assign(&noise).expect("same dims");
    }
    let windows = uniform(&mut rng, &[2, horizon + 1, d], 1.0);
    let lg = loss_graph(&params, &windows, horizon, &weights).expect("loss graph");
    let mut grads = lg.graph.backward(lg.total).expect("backward pass");
    lg.params
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let analytic = grads.take(id).expect("parameter gradient");
            let numeric = finite_difference(&params, i, FD_STEP, |p| {
                loss_graph(p, &windows, horizon, &weights).expect("loss graph").values().total
            });
            GradientCheck {
                name: PARAM_NAMES[i],
                seed,
                param: i,
                error: relative_gradient_error(&analytic, &numeric),
            }
        })
        .collect()
}

/// Gradient of the ROM reconstruction loss on a 16×16 two-layer autoencoder.
pub fn rom_gradient_checks(seed: u64) -> Vec<GradientCheck> {
    let (h, w) = (16, 16);
    let cfg = RomConfig {
        code_dim: 3,
        channels: vec![2, 3],
        seed,
        ..RomConfig::default()
    };
    let norm = FieldNormalizer::from_parts(vec![0.0; h * w], 1.0).expect("unit scale");
    let model = ConvAutoencoder::init(h, w, norm, &cfg).expect("valid shapes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 900);
    let rows = uniform(&mut rng, &[2, h * w], 1.0);
    let params = model.params().to_vec();
    let (_, grads) = model.loss_and_gradients(&params, &rows).expect("gradients");
    grads
        .iter()
        .enumerate()
        .map(|(i, analytic)| {
            let numeric = finite_difference(&params, i, FD_STEP, |p| {
                model.reconstruction_loss(p, &rows).expect("loss")
            });
            GradientCheck {
                name: "conv_rom",
                seed,
                param: i,
                error: relative_gradient_error(analytic, &numeric),
            }
        })
        .collect()
}

/// Random `n`-point regressor with random hyperparameters.
pub fn gp_fixture(n: usize, seed: u64) -> GpRegressor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let h = GpHyper {
        signal_variance: rng.random_range(0.5..2.0),
        lengthscales: [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)],
        noise_variance: rng.random_range(1e-3..1e-1),
    };
    GpRegressor::new(x, y, h).expect("positive definite")
}

/// Log marginal likelihood, posterior mean and variance at `query` computed
/// through the explicit inverse of `K + (σ_n² + jitter) I`.
pub fn gp_dense_oracle(gp: &GpRegressor, query: &[f64; 2]) -> (f64, f64, f64) {
    let n = gp.len();
    let h = gp.hyper();
    let x = gp.inputs();
    let k = Tensor::from_fn(&[n, n], |ij| {
        let (i, j) = (ij / n, ij % n);
        let diag = if i == j { h.noise_variance + gp.jitter() } else { 0.0 };
        kernel(&x[i], &x[j], h).expect("valid hyperparameters") + diag
    });
    let (inv, log_det) = dense_inverse_log_det(&k);
    let y = gp.targets();
    let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv.at(i, j) * y[j]).sum()).collect();
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let ks: Vec<f64> = x.iter().map(|xi| kernel(xi, query, h).expect("valid")).collect();
    let mean = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let quad: f64 = (0..n)
        .map(|i| (0..n).map(|j| ks[i] * inv.at(i, j) * ks[j]).sum::<f64>())
        .sum();
    (lml, mean, h.signal_variance - quad)
}

/// Largest absolute deviation between the Cholesky path and the dense oracle
/// over the likelihood and three query points.
pub fn gp_oracle_deviation(gp: &GpRegressor) -> f64 {
    let mut worst: f64 = 0.0;
    for q in [[0.37, 0.61], [0.0, 1.0], [1.3, -0.2]] {
        let (lml, mean, var) = gp_dense_oracle(gp, &q);
        let (m, v) = gp_predict(gp, &q);
        worst = worst
            .max((gp.log_marginal_likelihood() - lml).abs())
            .max((m - mean).abs())
            .max((v - var.max(0.0)).abs());
    }
    worst
}

/// Largest `|mean − y|` at the training points of a near-noise-free fit.
pub fn gp_interpolation_error() -> f64 {
    let x: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 / 5.0, (i % 3) as f64 / 2.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
    let h = GpHyper {
        signal_variance: 1.0,
        lengthscales: [0.3, 0.3],
        noise_variance: 1e-10,
    };
    let gp = GpRegressor::new(x.clone(), y.clone(), h).expect("positive definite");
    x.iter()
        .zip(&y)
        .map(|(p, t)| (gp_predict(&gp, p).0 - t).abs())
        .fold(0.0, f64::max)
}

/// Draw from a zero-mean GP prior with hyperparameters `h` at `n` uniform inputs.
pub fn gp_prior_sample(n: usize, h: &GpHyper, seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let k = Tensor::from_fn(&[n, n], |ij| {
        let (i, j) = (ij / n, ij % n);
        kernel(&x[i], &x[j], h).expect("valid") + if i == j { h.noise_variance } else { 0.0 }
    });
    let l = cholesky(&k).expect("positive definite");
    let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..n).map(|i| (0..=i).map(|j| l.at(i, j) * e[j]).sum()).collect();
    (x, y)
}

/// Lengthscales fitted to a 40-point prior sample drawn with `σ_f² = 1`, `ℓ = 0.2`.
pub fn gp_recovered_lengthscales() -> [f64; 2] {
    let truth = GpHyper {
        signal_variance: 1.0,
        lengthscales: [0.2, 0.2],
        noise_variance: 1e-4,
    };
    let (x, y) = gp_prior_sample(40, &truth, 5);
    fit_gp(&x, &y, &GpFitConfig::default())
        .expect("fit succeeds")
        .hyper()
        .lengthscales
}
