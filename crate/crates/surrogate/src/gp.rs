//! Gaussian-process regression of latent codes over `(Re, t)`.

use std::path::Path;

use pistm_core::io::{load_checkpoint, save_checkpoint};
use pistm_core::linalg::{cholesky, cholesky_solve, solve_lower};
use pistm_core::{CoreError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result, SurrogateError};
use crate::rom::LatentTable;

pub const CHECKPOINT_KIND: &str = "gp_bundle";

/// Diagonal jitter tried in order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Squared-exponential kernel hyperparameters with one lengthscale per input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_variance: f64,
    pub lengthscales: [f64; 2],
    pub noise_variance: f64,
}

impl GpHyper {
    fn validate(&self) -> Result<()> {
        let all = [
            self.signal_variance,
            self.lengthscales[0],
            self.lengthscales[1],
            self.noise_variance,
        ];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return contract(format!("hyperparameters must be positive, got {self:?}"));
        }
        Ok(())
    }

    /// `(ln σ², ln ℓ_Re, ln ℓ_t, ln σ_n²)`.
    pub fn to_log(&self) -> [f64; 4] {
        [
            self.signal_variance.ln(),
            self.lengthscales[0].ln(),
            self.lengthscales[1].ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(p: [f64; 4]) -> Self {
        Self {
            signal_variance: p[0].exp(),
            lengthscales: [p[1].exp(), p[2].exp()],
            noise_variance: p[3].exp(),
        }
    }
}

fn se(x1: &[f64; 2], x2: &[f64; 2], h: &GpHyper) -> f64 {
    let r2: f64 = (0..2)
        .map(|d| ((x1[d] - x2[d]) / h.lengthscales[d]).powi(2))
        .sum();
    h.signal_variance * (-0.5 * r2).exp()
}

/// `σ²·exp(−½ Σ_d (x1_d − x2_d)² / ℓ_d²)`.
pub fn kernel(x1: &[f64; 2], x2: &[f64; 2], hyper: &GpHyper) -> Result<f64> {
    hyper.validate()?;
    Ok(se(x1, x2, hyper))
}

/// A GP conditioned on training data: Cholesky factor of `K + (σ_n² + jitter)·I`
/// and `α = (K + σ_n² I)⁻¹ y`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpRegressor {
    inputs: Vec<[f64; 2]>,
    targets: Vec<f64>,
    hyper: GpHyper,
    jitter: f64,
    chol: Tensor,
    alpha: Vec<f64>,
}

impl GpRegressor {
    pub fn new(inputs: Vec<[f64; 2]>, targets: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        hyper.validate()?;
        let n = inputs.len();
        if n == 0 || targets.len() != n {
            return contract(format!(
                "GP needs matching non-empty inputs and targets, got {n} and {}",
                targets.len()
            ));
        }
        let base = Tensor::from_fn(&[n, n], |ij| se(&inputs[ij / n], &inputs[ij % n], &hyper));
        let mut last = None;
        for jitter in JITTER_LADDER {
            let mut k = base.clone();
            for i in 0..n {
                let v = k.at(i, i) + hyper.noise_variance + jitter;
                k.set(i, i, v);
            }
            match cholesky(&k) {
                Ok(chol) => {
                    let y = Tensor::new(&[n], targets.clone())?;
                    let alpha = cholesky_solve(&chol, &y)?.into_data();
                    return Ok(Self {
                        inputs,
                        targets,
                        hyper,
                        jitter,
                        chol,
                        alpha,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("ladder is non-empty").into())
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[[f64; 2]] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn cholesky_factor(&self) -> &Tensor {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `−½ yᵀα − Σ ln L_ii − (n/2) ln 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let fit: f64 = self.targets.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        let logdet: f64 = (0..n).map(|i| self.chol.at(i, i).ln()).sum();
        -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Gradient of the log marginal likelihood with respect to [`GpHyper::to_log`]:
    /// `½ tr((ααᵀ − K_y⁻¹) ∂K_y/∂θ)`.
    pub fn lml_gradient(&self) -> Result<[f64; 4]> {
        let n = self.len();
        let kinv = cholesky_solve(&self.chol, &Tensor::eye(n))?;
        let mut grad = [0.0; 4];
        let h = &self.hyper;
        for i in 0..n {
            for j in 0..n {
                let w = self.alpha[i] * self.alpha[j] - kinv.at(i, j);
                let k = se(&self.inputs[i], &self.inputs[j], h);
                grad[0] += w * k;
                for d in 0..2 {
                    let r = (self.inputs[i][d] - self.inputs[j][d]) / h.lengthscales[d];
                    grad[1 + d] += w * k * r * r;
                }
            }
            grad[3] += (self.alpha[i] * self.alpha[i] - kinv.at(i, i)) * h.noise_variance;
        }
        Ok(grad.map(|g| 0.5 * g))
    }
}

pub fn log_marginal_likelihood(gp: &GpRegressor) -> f64 {
    gp.log_marginal_likelihood()
}

/// Posterior mean and latent-function variance at `x`.
///
/// Round-off can make the variance slightly negative; it is clamped at 0.
pub fn gp_predict(gp: &GpRegressor, x: &[f64; 2]) -> (f64, f64) {
    let n = gp.len();
    let ks: Vec<f64> = gp.inputs.iter().map(|xi| se(xi, x, &gp.hyper)).collect();
    let mean = ks.iter().zip(&gp.alpha).map(|(k, a)| k * a).sum();
    let v = solve_lower(&gp.chol, &Tensor::new(&[n], ks).expect("length n"))
        .expect("factor is non-singular");
    let var = gp.hyper.signal_variance - v.data().iter().map(|a| a * a).sum::<f64>();
    (mean, var.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub iterations: usize,
    /// Adam step size in log-hyperparameter space.
    pub learning_rate: f64,
    pub signal_variance_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 200,
            learning_rate: 0.05,
            signal_variance_bounds: (1e-6, 1e4),
            lengthscale_bounds: (1e-2, 1e2),
            noise_variance_bounds: (1e-10, 1e1),
            seed: 0,
        }
    }
}

impl GpFitConfig {
    fn log_bounds(&self) -> [(f64, f64); 4] {
        let l = |(a, b): (f64, f64)| (a.ln(), b.ln());
        [
            l(self.signal_variance_bounds),
            l(self.lengthscale_bounds),
            l(self.lengthscale_bounds),
            l(self.noise_variance_bounds),
        ]
    }
}

/// Why one start of the multi-start search ended without a usable point.
#[derive(Clone, Debug)]
pub struct StartFailure {
    pub start: usize,
    pub reason: String,
}

fn clamp_log(p: [f64; 4], bounds: &[(f64, f64); 4]) -> [f64; 4] {
    let mut q = p;
    for (v, (lo, hi)) in q.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
    q
}

/// Adam ascent from one starting point; returns the best regressor visited.
fn ascend(x: &[[f64; 2]], y: &[f64], start: [f64; 4], cfg: &GpFitConfig) -> Result<GpRegressor> {
    let bounds = cfg.log_bounds();
    let mut theta = clamp_log(start, &bounds);
    let mut best = GpRegressor::new(x.to_vec(), y.to_vec(), GpHyper::from_log(theta))?;
    let mut best_lml = best.log_marginal_likelihood();
    let mut current = best.clone();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = [0.0; 4];
    let mut v = [0.0; 4];
    let mut lr = cfg.learning_rate;
    for it in 1..=cfg.iterations {
        let g = current.lml_gradient()?;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut next = theta;
        for i in 0..4 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(it as i32));
            let vh = v[i] / (1.0 - b2.powi(it as i32));
            next[i] += lr * mh / (vh.sqrt() + eps);
        }
        let next = clamp_log(next, &bounds);
        match GpRegressor::new(x.to_vec(), y.to_vec(), GpHyper::from_log(next)) {
            Ok(gp) => {
                let lml = gp.log_marginal_likelihood();
                if lml.is_finite() && lml > best_lml {
                    best_lml = lml;
                    best = gp.clone();
                }
                let moved = next
                    .iter()
                    .zip(&theta)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                theta = next;
                current = gp;
                if moved < 1e-9 {
                    break;
                }
            }
            Err(_) => lr *= 0.5,
        }
    }
    Ok(best)
}

/// Maximizes the log marginal likelihood over seeded multi-start points.
pub fn fit_gp(x: &[[f64; 2]], y: &[f64], cfg: &GpFitConfig) -> Result<GpRegressor> {
    if x.len() < 2 || y.len() != x.len() {
        return contract(format!(
            "GP fit needs n ≥ 2 matching inputs and targets, got {} and {}",
            x.len(),
            y.len()
        ));
    }
    for i in 0..x.len() {
        for j in 0..i {
            if x[i] == x[j] && y[i] != y[j] {
                return contract(format!("duplicate input {:?} with conflicting targets", x[i]));
            }
        }
    }
    if cfg.restarts == 0 {
        return contract("GP fit needs at least one start");
    }
    let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let scale = power.max(cfg.signal_variance_bounds.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4750_0000);
    let starts: Vec<[f64; 4]> = (0..cfg.restarts)
        .map(|_| {
            [
                (scale * rng.random_range(0.1f64..10.0)).ln(),
                rng.random_range(0.05f64..1.0).ln(),
                rng.random_range(0.05f64..1.0).ln(),
                (scale * rng.random_range(1e-6f64..1e-2)).ln(),
            ]
        })
        .collect();
    let mut best: Option<GpRegressor> = None;
    let mut failures = Vec::new();
    for (i, s) in starts.into_iter().enumerate() {
        match ascend(x, y, s, cfg) {
            Ok(gp) => {
                let better = best
                    .as_ref()
                    .is_none_or(|b| gp.log_marginal_likelihood() > b.log_marginal_likelihood());
                if better {
                    best = Some(gp);
                }
            }
            Err(e) => failures.push(StartFailure {
                start: i,
                reason: e.to_string(),
            }),
        }
    }
    best.ok_or_else(|| {
        let detail: Vec<String> = failures
            .iter()
            .map(|f| format!("start {}: {}", f.start, f.reason))
            .collect();
        SurrogateError::Fit(format!("all {} starts failed ({})", cfg.restarts, detail.join("; ")))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpBundleConfig {
    pub fit: GpFitConfig,
    /// Fit one GP per (timestep, latent dimension) instead of using `t` as an input.
    pub per_timestep: bool,
}

impl Default for GpBundleConfig {
    fn default() -> Self {
        Self {
            fit: GpFitConfig::default(),
            per_timestep: false,
        }
    }
}

/// A regressor on standardized targets.
#[derive(Clone, Debug, PartialEq)]
struct DimModel {
    gp: GpRegressor,
    y_mean: f64,
    y_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DimMeta {
    hyper: GpHyper,
    jitter: f64,
    y_mean: f64,
    y_std: f64,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    re_range: (f64, f64),
    t_range: (i64, i64),
    code_dim: usize,
    per_timestep: bool,
    models: Vec<DimMeta>,
}

/// Independent GPs, one per latent dimension (and per timestep in that mode).
#[derive(Clone, Debug, PartialEq)]
pub struct GpBundle {
    re_range: (f64, f64),
    t_range: (i64, i64),
    code_dim: usize,
    per_timestep: bool,
    models: Vec<DimModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundlePrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `Re` lies outside the range the bundle was trained over.
    pub extrapolated: bool,
}

impl GpBundle {
    /// Fits on a latent table. `re_range` fixes the Re normalization (the DoE range);
    /// by default the table's own extent is used.
    pub fn fit(table: &LatentTable, re_range: Option<(f64, f64)>, cfg: &GpBundleConfig) -> Result<Self> {
        if table.rows.len() < 2 {
            return contract("latent table needs at least two rows");
        }
        let re_range = re_range.unwrap_or_else(|| {
            table.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.re), hi.max(r.re))
            })
        });
        if !(re_range.1 > re_range.0) {
            return contract(format!("degenerate Re range {re_range:?}"));
        }
        let t_lo = table.rows.iter().map(|r| r.t).min().unwrap();
        let t_hi = table.rows.iter().map(|r| r.t).max().unwrap();
        let mut bundle = Self {
            re_range,
            t_range: (t_lo, t_hi),
            code_dim: table.code_dim,
            per_timestep: cfg.per_timestep,
            models: Vec::new(),
        };
        let groups: Vec<Vec<usize>> = if cfg.per_timestep {
            (t_lo..=t_hi)
                .map(|t| (0..table.rows.len()).filter(|&i| table.rows[i].t == t).collect())
                .collect()
        } else {
            vec![(0..table.rows.len()).collect()]
        };
        let jobs: Vec<(usize, usize)> = (0..groups.len())
            .flat_map(|g| (0..table.code_dim).map(move |d| (g, d)))
            .collect();
        bundle.models = jobs
            .par_iter()
            .map(|&(g, d)| {
                let rows = &groups[g];
                let x: Vec<[f64; 2]> = rows
                    .iter()
                    .map(|&i| bundle.normalize_input(table.rows[i].re, table.rows[i].t))
                    .collect();
                let raw: Vec<f64> = rows.iter().map(|&i| table.rows[i].z[d]).collect();
                let n = raw.len() as f64;
                let y_mean = raw.iter().sum::<f64>() / n;
                let sd = (raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
                let y_std = if sd > 1e-12 { sd } else { 1.0 };
                let y: Vec<f64> = raw.iter().map(|v| (v - y_mean) / y_std).collect();
                let fit_cfg = GpFitConfig {
                    seed: cfg.fit.seed.wrapping_add((g * table.code_dim + d) as u64),
                    ..cfg.fit.clone()
                };
                let gp = fit_gp(&x, &y, &fit_cfg).map_err(|e| {
                    SurrogateError::Fit(format!("latent dimension {d}, group {g}: {e}"))
                })?;
                Ok(DimModel { gp, y_mean, y_std })
            })
            .collect::<Result<_>>()?;
        Ok(bundle)
    }

    /// `(Re, t)` mapped to `[0, 1]²` over the training ranges.
    pub fn normalize_input(&self, re: f64, t: i64) -> [f64; 2] {
        let (lo, hi) = self.re_range;
        let (t0, t1) = self.t_range;
        let tn = if t1 > t0 {
            (t - t0) as f64 / (t1 - t0) as f64
        } else {
            0.0
        };
        [(re - lo) / (hi - lo), tn]
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn re_range(&self) -> (f64, f64) {
        self.re_range
    }

    pub fn t_range(&self) -> (i64, i64) {
        self.t_range
    }

    pub fn per_timestep(&self) -> bool {
        self.per_timestep
    }

    /// Fitted hyperparameters of every regressor.
    pub fn hypers(&self) -> Vec<GpHyper> {
        self.models.iter().map(|m| m.gp.hyper).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let meta = BundleMeta {
            re_range: self.re_range,
            t_range: self.t_range,
            code_dim: self.code_dim,
            per_timestep: self.per_timestep,
            models: self
                .models
                .iter()
                .map(|m| DimMeta {
                    hyper: m.gp.hyper,
                    jitter: m.gp.jitter,
                    y_mean: m.y_mean,
                    y_std: m.y_std,
                })
                .collect(),
        };
        let mut owned: Vec<(String, Tensor)> = Vec::new();
        for (i, m) in self.models.iter().enumerate() {
            let gp = &m.gp;
            let n = gp.len();
            let x: Vec<f64> = gp.inputs.iter().flatten().copied().collect();
            let h = gp.hyper.to_log().to_vec();
            owned.push((format!("m{i}_x"), Tensor::new(&[n, 2], x)?));
            owned.push((format!("m{i}_y"), Tensor::new(&[n], gp.targets.clone())?));
            owned.push((format!("m{i}_hyper"), Tensor::new(&[4], h)?));
            owned.push((format!("m{i}_chol"), gp.chol.clone()));
            owned.push((format!("m{i}_alpha"), Tensor::new(&[n], gp.alpha.clone())?));
        }
        let named: Vec<(&str, &Tensor)> = owned.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let meta = serde_json::to_value(meta).map_err(|e| SurrogateError::Format(e.to_string()))?;
        save_checkpoint(dir, CHECKPOINT_KIND, meta, &named)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut ck = load_checkpoint(dir, CHECKPOINT_KIND)?;
        let meta: BundleMeta = serde_json::from_value(ck.manifest.meta.clone())
            .map_err(|e| SurrogateError::Format(e.to_string()))?;
        let mut models = Vec::with_capacity(meta.models.len());
        for (i, dm) in meta.models.iter().enumerate() {
            let x = ck.take(&format!("m{i}_x"))?;
            let n = x.dims()[0];
            let inputs = x.data().chunks(2).map(|c| [c[0], c[1]]).collect();
            let targets = ck.take(&format!("m{i}_y"))?.into_data();
            let chol = ck.take(&format!("m{i}_chol"))?;
            let alpha = ck.take(&format!("m{i}_alpha"))?.into_data();
            if targets.len() != n || alpha.len() != n || chol.dims() != [n, n] {
                return Err(SurrogateError::Format(format!("regressor {i} has inconsistent sizes")));
            }
            models.push(DimModel {
                gp: GpRegressor {
                    inputs,
                    targets,
                    hyper: dm.hyper,
                    jitter: dm.jitter,
                    chol,
                    alpha,
                },
                y_mean: dm.y_mean,
                y_std: dm.y_std,
            });
        }
        let groups = if meta.per_timestep {
            (meta.t_range.1 - meta.t_range.0 + 1) as usize
        } else {
            1
        };
        if models.len() != groups * meta.code_dim {
            return Err(SurrogateError::Format("regressor count does not match the layout".into()));
        }
        Ok(Self {
            re_range: meta.re_range,
            t_range: meta.t_range,
            code_dim: meta.code_dim,
            per_timestep: meta.per_timestep,
            models,
        })
    }
}

/// Posterior mean and variance of every latent dimension at `(re, t)`.
pub fn predict_bundle(bundle: &GpBundle, re: f64, t: i64) -> Result<BundlePrediction> {
    let (t0, t1) = bundle.t_range;
    if t < t0 || t > t1 {
        return contract(format!("t = {t} outside the trained window [{t0}, {t1}]"));
    }
    if !re.is_finite() {
        return Err(CoreError::Contract(format!("Re = {re} is not finite")).into());
    }
    let x = bundle.normalize_input(re, t);
    let group = if bundle.per_timestep {
        (t - t0) as usize
    } else {
        0
    };
    let models = &bundle.models[group * bundle.code_dim..(group + 1) * bundle.code_dim];
    let mut mean = Vec::with_capacity(bundle.code_dim);
    let mut variance = Vec::with_capacity(bundle.code_dim);
    for m in models {
        let (mu, var) = gp_predict(&m.gp, &x);
        mean.push(m.y_mean + m.y_std * mu);
        variance.push(m.y_std * m.y_std * var);
    }
    let (lo, hi) = bundle.re_range;
    Ok(BundlePrediction {
        mean,
        variance,
        extrapolated: re < lo || re > hi,
    })
}
