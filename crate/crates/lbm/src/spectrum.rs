//! Dominant-frequency analysis of probe time series.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use pistm_core::FlowFieldSequence;

use crate::error::{LbmError, Result};

pub const MIN_PROBE_SAMPLES: usize = 64;

/// One-sided magnitude spectrum of a mean-removed signal; bin `k` is `k/n` cycles per sample.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn of_signal(signal: &[f64]) -> Result<Self> {
        let n = signal.len();
        if n < MIN_PROBE_SAMPLES {
            return Err(LbmError::ShortSignal {
                len: n,
                min: MIN_PROBE_SAMPLES,
            });
        }
        let mean = signal.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let half = n / 2;
        Ok(Self {
            frequencies: (0..=half).map(|k| k as f64 / n as f64).collect(),
            magnitudes: buf[..=half].iter().map(|c| c.norm()).collect(),
        })
    }

    /// Index of the largest non-DC bin, or `None` for a constant signal.
    pub fn peak_bin(&self) -> Option<usize> {
        let scale = self.magnitudes.iter().cloned().fold(0.0, f64::max);
        let (k, &m) = self
            .magnitudes
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        // Round-off of a mean-removed constant signal stays far below this.
        if m <= 1e-12 * scale.max(1e-300) || m < 1e-13 {
            return None;
        }
        Some(k)
    }

    pub fn dominant_frequency(&self) -> f64 {
        self.peak_bin().map_or(0.0, |k| self.frequencies[k])
    }

    /// Peak magnitude over the median magnitude of the non-DC bins.
    pub fn peak_to_median(&self) -> f64 {
        let Some(k) = self.peak_bin() else { return 0.0 };
        let mut rest: Vec<f64> = self.magnitudes[1..].to_vec();
        rest.sort_by(f64::total_cmp);
        let median = rest[rest.len() / 2];
        self.magnitudes[k] / median.max(f64::MIN_POSITIVE)
    }
}

/// Time series of one grid point, `point = (x, y)`.
pub fn probe_signal(sequence: &FlowFieldSequence, point: (usize, usize)) -> Vec<f64> {
    let (x, y) = point;
    let w = sequence.width();
    (0..sequence.len())
        .map(|i| sequence.tensor().outer(i)[y * w + x])
        .collect()
}

/// Dominant frequency (cycles per snapshot interval) of `|u|` at `point`; 0 for a constant signal.
pub fn probe_dominant_frequency(sequence: &FlowFieldSequence, point: (usize, usize)) -> Result<f64> {
    Ok(Spectrum::of_signal(&probe_signal(sequence, point))?.dominant_frequency())
}
