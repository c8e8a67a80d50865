//! Mean-field / global-RMS normalization shared by the autoencoders.

use pistm_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// `x ↦ (x − mean) / scale`, with `mean` a per-entry field and `scale` one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldNormalizer {
    mean: Vec<f64>,
    scale: f64,
}

/// Scalar part of a normalizer, stored in checkpoint metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScale {
    pub scale: f64,
}

impl FieldNormalizer {
    /// Fits on `samples` laid out as `[n, ...]`, each sample flattened.
    ///
    /// The scale is the RMS of the centred data; a degenerate (constant) data set
    /// gets scale 1.
    pub fn fit(samples: &Tensor) -> Result<Self> {
        let n = samples.dims()[0];
        if n == 0 || samples.ndim() < 2 {
            return contract("normalizer needs at least one sample");
        }
        let d = samples.len() / n;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(samples.outer(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = 0.0;
        for i in 0..n {
            for (m, v) in mean.iter().zip(samples.outer(i)) {
                ss += (v - m) * (v - m);
            }
        }
        let rms = (ss / (n * d) as f64).sqrt();
        let scale = if rms > 1e-12 * (1.0 + mean.iter().map(|m| m.abs()).fold(0.0, f64::max)) {
            rms
        } else {
            1.0
        };
        Ok(Self { mean, scale })
    }

    pub fn from_parts(mean: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return contract(format!("normalizer scale must be positive, got {scale}"));
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Normalizes each of the `[n, ...]` samples into an `[n, d]` matrix.
    pub fn normalize(&self, samples: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if samples.len() % d != 0 || samples.is_empty() {
            return contract(format!(
                "samples with {} entries are not a batch of {d}-dimensional fields",
                samples.len()
            ));
        }
        let n = samples.len() / d;
        let mut out = samples.clone().reshape(&[n, d])?;
        for i in 0..n {
            for (v, m) in out.outer_mut(i).iter_mut().zip(&self.mean) {
                *v = (*v - m) / self.scale;
            }
        }
        Ok(out)
    }

    /// Inverse of [`normalize`](Self::normalize), returned as `[n, d]`.
    pub fn denormalize(&self, normalized: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if normalized.len() % d != 0 || normalized.is_empty() {
            return contract("normalized batch does not match the field size");
        }
        let n = normalized.len() / d;
        let mut out = normalized.clone().reshape(&[n, d])?;
        for i in 0..n {
            for (v, m) in out.outer_mut(i).iter_mut().zip(&self.mean) {
                *v = *v * self.scale + m;
            }
        }
        Ok(out)
    }
}
