//! Binary pixmap (P6) heatmaps of single snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ColorMap {
    Gray,
    /// Black → red → yellow → white.
    Heat,
}

impl ColorMap {
    /// Color of `u ∈ [0, 1]`.
    pub fn color(self, u: f64) -> [u8; 3] {
        let u = u.clamp(0.0, 1.0);
        let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self {
            ColorMap::Gray => [byte(u); 3],
            ColorMap::Heat => [byte(3.0 * u), byte(3.0 * u - 1.0), byte(3.0 * u - 2.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Value range mapped linearly onto the color map.
    pub range: (f64, f64),
    pub bytes: Vec<u8>,
}

/// Heatmap of a row-major `height × width` field; row 0 is the top of the image.
pub fn render(field: &[f64], height: usize, width: usize, cmap: ColorMap) -> Result<Image> {
    if field.len() != height * width || field.is_empty() {
        return Err(PipelineError::Contract(format!(
            "field has {} values, expected {height}×{width}",
            field.len()
        )));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::Contract("field has non-finite values".into()));
    }
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let header = format!("P6\n{width} {height}\n255\n");
    let mut bytes = Vec::with_capacity(header.len() + 3 * field.len());
    bytes.extend_from_slice(header.as_bytes());
    for &v in field {
        let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        bytes.extend_from_slice(&cmap.color(u));
    }
    Ok(Image {
        width,
        height,
        range: (lo, hi),
        bytes,
    })
}

/// `|a − b|` element-wise.
pub fn abs_difference(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(PipelineError::Contract(format!(
            "difference of fields with {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
}
