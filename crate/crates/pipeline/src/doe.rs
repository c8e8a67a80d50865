//! Latin hypercube design of experiments over the Reynolds number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result};

/// One uniform draw inside each of `n` equal strata of `(lo, hi)`, in seeded random order.
pub fn lhs_sample(n: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(PipelineError::Contract("LHS needs n ≥ 1".into()));
    }
    if !(lo < hi) {
        return Err(PipelineError::Contract(format!("LHS range ({lo}, {hi}) is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (hi - lo) / n as f64;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            // `random` is in [0, 1); flip to (0, 1] half the time would bias, so
            // reject the single closed endpoint instead.
            let u = if u == 0.0 { 0.5 } else { u };
            lo + (i as f64 + u) * width
        })
        .collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        samples.swap(i, j);
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignOfExperiments {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub re_range: (f64, f64),
    pub seed: u64,
}

impl DesignOfExperiments {
    pub fn generate(n: usize, re_range: (f64, f64), test: Vec<f64>, seed: u64) -> Result<Self> {
        let doe = Self {
            train: lhs_sample(n, re_range.0, re_range.1, seed)?,
            test,
            re_range,
            seed,
        };
        doe.validate()?;
        Ok(doe)
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::generate(
            cfg.doe.n_train,
            (cfg.doe.re_min, cfg.doe.re_max),
            cfg.doe.test.clone(),
            cfg.doe_seed(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.re_range;
        for &re in self.train.iter().chain(&self.test) {
            if !(re > lo && re < hi) {
                return Err(PipelineError::Config(format!("Re = {re} outside ({lo}, {hi})")));
            }
        }
        if let Some(re) = self.train.iter().find(|re| self.test.contains(re)) {
            return Err(PipelineError::Config(format!(
                "Re = {re} is both a training and a test condition"
            )));
        }
        Ok(())
    }

    /// Training conditions within `radius` of `re`.
    pub fn neighbours(&self, re: f64, radius: f64) -> usize {
        self.train.iter().filter(|&&r| (r - re).abs() <= radius).count()
    }
}
