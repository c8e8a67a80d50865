//! Relative prediction errors between truth, Koopman forecasts and emulation.

use std::fmt::Write as _;

use pistm_core::FlowFieldSequence;
use serde::{Deserialize, Serialize};

use crate::config::TimeWindow;
use crate::error::{PipelineError, Result};

/// Stated in every report so alternative definitions can be compared.
pub const ERROR_DEFINITION: &str =
    "eps(t) = ||pred(t) - ref(t)||_F / ||ref(t)||_F, per snapshot, over the full grid";

/// `‖pred(t) − ref(t)‖_F / ‖ref(t)‖_F`.
pub fn relative_error(pred: &FlowFieldSequence, reference: &FlowFieldSequence, t: i64) -> Result<f64> {
    if pred.height() != reference.height() || pred.width() != reference.width() {
        return Err(PipelineError::Contract(format!(
            "grids differ: {}×{} vs {}×{}",
            pred.height(),
            pred.width(),
            reference.height(),
            reference.width()
        )));
    }
    let (p, r) = match (pred.at(t), reference.at(t)) {
        (Ok(p), Ok(r)) => (p, r),
        _ => {
            return Err(PipelineError::Contract(format!(
                "t = {t} not covered by both sequences"
            )))
        }
    };
    let den = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(PipelineError::DegenerateReference { t });
    }
    let num = p
        .iter()
        .zip(r)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepErrors {
    pub t: i64,
    /// Emulation against truth.
    pub eps_e: f64,
    /// Emulation against the Koopman forecast.
    pub eps_ke: f64,
    /// Koopman forecast against truth.
    pub eps_k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

impl Aggregate {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// `max − min`.
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub re: f64,
    pub steps: Vec<StepErrors>,
    pub eps_e: Aggregate,
    pub eps_ke: Aggregate,
    pub eps_k: Aggregate,
}

/// Errors of one condition at every `t` of the window.
pub fn compute_metrics(
    re: f64,
    truth: &FlowFieldSequence,
    koopman: &FlowFieldSequence,
    emulated: &FlowFieldSequence,
    window: &TimeWindow,
) -> Result<ConditionMetrics> {
    let steps = window
        .forecast_times()
        .map(|t| {
            Ok(StepErrors {
                t,
                eps_e: relative_error(emulated, truth, t)?,
                eps_ke: relative_error(emulated, koopman, t)?,
                eps_k: relative_error(koopman, truth, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionMetrics {
        re,
        eps_e: Aggregate::of(steps.iter().map(|s| s.eps_e)),
        eps_ke: Aggregate::of(steps.iter().map(|s| s.eps_ke)),
        eps_k: Aggregate::of(steps.iter().map(|s| s.eps_k)),
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub re: f64,
    pub simulate_seconds: f64,
    pub predict_seconds: f64,
}

impl Timing {
    pub fn speedup(&self) -> f64 {
        self.simulate_seconds / self.predict_seconds.max(f64::MIN_POSITIVE)
    }
}

/// Metrics of every test condition. Timings are not serialized with the report;
/// they live in the timing CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error_definition: String,
    pub window: TimeWindow,
    pub conditions: Vec<ConditionMetrics>,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

impl ErrorReport {
    pub fn new(window: TimeWindow, conditions: Vec<ConditionMetrics>, timings: Vec<Timing>) -> Self {
        Self {
            error_definition: ERROR_DEFINITION.into(),
            window,
            conditions,
            timings,
        }
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("re,t,eps_E,eps_KE,eps_K\n");
        for c in &self.conditions {
            for st in &c.steps {
                let _ = writeln!(s, "{},{},{:.10e},{:.10e},{:.10e}", c.re, st.t, st.eps_e, st.eps_ke, st.eps_k);
            }
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("re,simulate_seconds,predict_seconds,speedup\n");
        for t in &self.timings {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.3}",
                t.re,
                t.simulate_seconds,
                t.predict_seconds,
                t.speedup()
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Parsed `timing.csv` rows.
pub fn parse_timing_csv(text: &str) -> Result<Vec<Timing>> {
    let mut lines = text.lines();
    if lines.next() != Some("re,simulate_seconds,predict_seconds,speedup") {
        return Err(PipelineError::Format("timing CSV header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| PipelineError::Format(format!("timing CSV row `{l}`")))
            };
            Ok(Timing {
                re: num(0)?,
                simulate_seconds: num(1)?,
                predict_seconds: num(2)?,
            })
        })
        .collect()
}
