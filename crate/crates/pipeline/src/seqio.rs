//! Flow-field sequence files: a tensor container plus a JSON sidecar holding the
//! time stamp, source tag and operating condition.

use std::fs;
use std::path::{Path, PathBuf};

use pistm_core::io::{read_tensor, write_tensor};
use pistm_core::{FieldSource, FlowFieldSequence};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSidecar {
    pub t_start: i64,
    pub t_end: i64,
    pub source: FieldSource,
    pub re: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Errors with `MissingInput` unless `path` exists.
pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            path: path.to_path_buf(),
        })
    }
}

pub fn write_sequence(path: &Path, seq: &FlowFieldSequence, re: Option<f64>) -> Result<()> {
    write_tensor(path, seq.tensor())?;
    let side = SequenceSidecar {
        t_start: seq.t_start(),
        t_end: seq.t_end(),
        source: seq.source(),
        re,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<SequenceSidecar> {
    let side = sidecar_path(path);
    require(&side)?;
    serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", side.display())))
}

pub fn read_sequence(path: &Path) -> Result<(FlowFieldSequence, SequenceSidecar)> {
    require(path)?;
    let side = read_sidecar(path)?;
    let tensor = read_tensor(path)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))?;
    let seq = FlowFieldSequence::new(tensor, side.t_start, side.source)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))?;
    if seq.t_end() != side.t_end {
        return Err(PipelineError::Format(format!(
            "{}: sidecar claims t_end = {}, data ends at {}",
            path.display(),
            side.t_end,
            seq.t_end()
        )));
    }
    Ok((seq, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pistm_core::Tensor;

    #[test]
    fn round_trip_keeps_time_and_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pstm");
        let seq = FlowFieldSequence::new(
            Tensor::from_fn(&[3, 2, 2], |i| i as f64),
            -3,
            FieldSource::Koopman,
        )
        .unwrap();
        write_sequence(&path, &seq, Some(120.5)).unwrap();
        let (back, side) = read_sequence(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(side.re, Some(120.5));
        assert_eq!(side.t_end, -1);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_sequence(Path::new("/nonexistent/x.pstm")).unwrap_err();
        assert_eq!(err.category(), "io.missing_input");
    }
}
