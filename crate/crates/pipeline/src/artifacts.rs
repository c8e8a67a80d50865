//! Stage manifests: what a stage read, what it wrote, and the content hashes
//! that make reruns skippable and the data-hygiene audit possible.

use std::fs;
use std::io::Read;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::seqio::require;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What an input file holds, as far as data hygiene is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Simulated truth strictly before the forecast window.
    History,
    /// Simulated truth inside the forecast window (evaluation only).
    Future,
    /// A per-condition Koopman forecast.
    KoopmanForecast,
    /// The ROM latent table.
    LatentTable,
    /// A trained model directory's checkpoint file.
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRecord {
    /// Path relative to the run root.
    pub path: String,
    pub sha256: String,
    pub kind: InputKind,
    pub re: Option<f64>,
    /// Inclusive time range covered by the file, where meaningful.
    pub t_range: Option<(i64, i64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    pub stage: String,
    /// `true` for artifacts that may consume test-condition or in-window truth.
    pub evaluation_only: bool,
    pub condition: Option<f64>,
    pub cache_key: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
    /// Stage-specific facts (loss values, split sizes, …).
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    require(path)?;
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hash over every regular file below `dir`, in sorted relative-path order.
pub fn sha256_dir(dir: &Path) -> Result<String> {
    require(dir)?;
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(sha256_file(&dir.join(&rel))?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(relative(root, &path)?);
        }
    }
    Ok(())
}

/// Hash of a file or a directory tree.
pub fn sha256_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        sha256_dir(path)
    } else {
        sha256_file(path)
    }
}

/// `/`-separated path of `path` relative to `root`.
pub fn relative(root: &Path, path: &Path) -> Result<String> {
    let rel = path.strip_prefix(root).map_err(|_| {
        PipelineError::Contract(format!(
            "{} is not inside {}",
            path.display(),
            root.display()
        ))
    })?;
    let parts: Vec<String> = rel
        .components()
        .map(|c| match c {
            Component::Normal(s) => Ok(s.to_string_lossy().into_owned()),
            _ => Err(PipelineError::Contract(format!("unexpected path component in {}", rel.display()))),
        })
        .collect::<Result<_>>()?;
    Ok(parts.join("/"))
}

/// Cache key of a stage: its name, its configuration and the hashes of its inputs.
pub fn cache_key(stage: &str, config: &serde_json::Value, inputs: &[InputRecord]) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    for i in inputs {
        h.update([0]);
        h.update(i.path.as_bytes());
        h.update([0]);
        h.update(i.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

impl StageManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        require(&path)?;
        serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn stale_outputs(&self, root: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| sha256_path(&root.join(&o.path)).ok().as_deref() != Some(o.sha256.as_str()))
            .map(|o| o.path.clone())
            .collect()
    }
}

/// The manifest in `dir` when it carries `key` and all its outputs verify.
pub fn cached(root: &Path, dir: &Path, key: &str) -> Option<StageManifest> {
    let m = StageManifest::read(dir).ok()?;
    (m.cache_key == key && m.stale_outputs(root).is_empty()).then_some(m)
}

pub fn output_record(root: &Path, path: &Path) -> Result<OutputRecord> {
    Ok(OutputRecord {
        path: relative(root, path)?,
        sha256: sha256_path(path)?,
    })
}

pub fn input_record(
    root: &Path,
    path: &Path,
    kind: InputKind,
    re: Option<f64>,
    t_range: Option<(i64, i64)>,
) -> Result<InputRecord> {
    Ok(InputRecord {
        path: relative(root, path)?,
        sha256: sha256_path(path)?,
        kind,
        re,
        t_range,
    })
}

/// Directory naming of one operating condition.
pub fn condition_tag(re: f64) -> String {
    format!("re{re:011.6}")
}

/// Directory layout of one pipeline run.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_file(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn doe_file(&self) -> PathBuf {
        self.root.join("doe.json")
    }

    pub fn sim_dir(&self, re: f64) -> PathBuf {
        self.root.join("sims").join(condition_tag(re))
    }

    pub fn kae_dir(&self, re: f64) -> PathBuf {
        self.root.join("kae").join(condition_tag(re))
    }

    pub fn rom_dir(&self) -> PathBuf {
        self.root.join("rom")
    }

    pub fn gp_dir(&self) -> PathBuf {
        self.root.join("gp")
    }

    /// Evaluation-only artifacts of a test condition.
    pub fn eval_dir(&self, re: f64) -> PathBuf {
        self.root.join("eval").join(condition_tag(re))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn timing_csv(&self) -> PathBuf {
        self.root.join("timing.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
}
