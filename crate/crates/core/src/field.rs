//! Time-ordered stacks of 2-D scalar fields.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, CoreError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSource {
    Simulation,
    Koopman,
    Emulated,
}

/// Snapshots `f(t)` for a contiguous range of integer times starting at `t_start`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowFieldSequence {
    fields: Tensor,
    t_start: i64,
    source: FieldSource,
}

impl FlowFieldSequence {
    /// `fields` must be `[n_t, H, W]`. Simulation output must be non-negative.
    pub fn new(fields: Tensor, t_start: i64, source: FieldSource) -> Result<Self> {
        if fields.ndim() != 3 {
            return shape_err(format!(
                "field sequence must be [n_t, H, W], got {:?}",
                fields.dims()
            ));
        }
        if !fields.is_finite() {
            return Err(CoreError::Contract("field sequence has non-finite values".into()));
        }
        if source == FieldSource::Simulation && fields.data().iter().any(|&v| v < 0.0) {
            return Err(CoreError::Contract(
                "simulated velocity magnitude must be non-negative".into(),
            ));
        }
        Ok(Self {
            fields,
            t_start,
            source,
        })
    }

    pub fn from_frames(frames: &[Tensor], t_start: i64, source: FieldSource) -> Result<Self> {
        Self::new(Tensor::stack(frames)?, t_start, source)
    }

    pub fn len(&self) -> usize {
        self.fields.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.fields.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.fields.dims()[2]
    }

    pub fn t_start(&self) -> i64 {
        self.t_start
    }

    /// Last time index (inclusive).
    pub fn t_end(&self) -> i64 {
        self.t_start + self.len() as i64 - 1
    }

    pub fn source(&self) -> FieldSource {
        self.source
    }

    pub fn tensor(&self) -> &Tensor {
        &self.fields
    }

    pub fn into_tensor(self) -> Tensor {
        self.fields
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.t_start && t <= self.t_end()
    }

    /// Raw values of the snapshot at time `t`.
    pub fn at(&self, t: i64) -> Result<&[f64]> {
        if !self.contains(t) {
            return Err(CoreError::Contract(format!(
                "time {t} outside [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        Ok(self.fields.outer((t - self.t_start) as usize))
    }

    /// Snapshot at index `i` (0-based) as an `H×W` tensor.
    pub fn frame(&self, i: usize) -> Tensor {
        Tensor::new(&[self.height(), self.width()], self.fields.outer(i).to_vec())
            .expect("frame dims")
    }

    /// Sub-sequence covering times `[t0, t1]` inclusive.
    pub fn window(&self, t0: i64, t1: i64) -> Result<Self> {
        if t1 < t0 || !self.contains(t0) || !self.contains(t1) {
            return Err(CoreError::Contract(format!(
                "window [{t0}, {t1}] not inside [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        let a = (t0 - self.t_start) as usize;
        let n = (t1 - t0 + 1) as usize;
        let plane = self.height() * self.width();
        let data = self.fields.data()[a * plane..(a + n) * plane].to_vec();
        Self::new(
            Tensor::new(&[n, self.height(), self.width()], data)?,
            t0,
            self.source,
        )
    }

    pub fn with_source(mut self, source: FieldSource) -> Self {
        self.source = source;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> FlowFieldSequence {
        FlowFieldSequence::new(
            Tensor::from_fn(&[5, 2, 3], |i| i as f64),
            -3,
            FieldSource::Simulation,
        )
        .unwrap()
    }

    #[test]
    fn time_indexing() {
        let s = seq();
        assert_eq!(s.t_end(), 1);
        assert_eq!(s.at(-3).unwrap()[0], 0.0);
        assert_eq!(s.at(1).unwrap()[0], 24.0);
        assert!(s.at(2).is_err());
    }

    #[test]
    fn window_slices_times() {
        let w = seq().window(-1, 0).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.t_start(), -1);
        assert_eq!(w.at(-1).unwrap()[0], 12.0);
        assert!(seq().window(0, 5).is_err());
    }

    #[test]
    fn negative_simulation_rejected() {
        let t = Tensor::full(&[1, 2, 2], -1.0);
        assert!(FlowFieldSequence::new(t.clone(), 0, FieldSource::Simulation).is_err());
        assert!(FlowFieldSequence::new(t, 0, FieldSource::Koopman).is_ok());
    }
}
