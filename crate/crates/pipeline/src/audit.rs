//! Data-hygiene audit of a run directory.
//!
//! Every training artifact (`kae/*`, `rom/`, `gp/`) is checked against its
//! manifest: no input may hold truth at `t ≥ T`, come from a test condition or
//! live under `eval/`, and every recorded hash must match the file on disk.
//! Forecasts and latent tables are traced back to the manifests that produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pistm_surrogate::LatentTable;
use serde::Serialize;

use crate::artifacts::{sha256_path, InputKind, InputRecord, RunLayout, StageManifest};
use crate::error::{PipelineError, Result};
use crate::seqio::read_sidecar;
use crate::stages::LATENTS_FILE;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub manifests_checked: usize,
    pub inputs_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// `Err(Hygiene)` listing every violation.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(PipelineError::Hygiene(self.violations.join("; ")))
        }
    }
}

fn is_test(re: f64, test: &[f64]) -> bool {
    test.iter().any(|&t| (t - re).abs() <= 1e-9 * t.abs().max(1.0))
}

struct Auditor<'a> {
    root: &'a Path,
    t0: i64,
    test: &'a [f64],
    report: AuditReport,
    /// Output path → producing stage, for manifests that passed.
    clean_outputs: BTreeMap<String, String>,
}

impl Auditor<'_> {
    fn flag(&mut self, msg: String) {
        self.report.violations.push(msg);
    }

    fn check_input(&mut self, owner: &str, input: &InputRecord) {
        self.report.inputs_checked += 1;
        let path = self.root.join(&input.path);
        let here = format!("{owner}: input {}", input.path);
        if input.path.starts_with("eval/") {
            self.flag(format!("{here} is an evaluation-only artifact"));
        }
        if input.kind == InputKind::Future {
            self.flag(format!("{here} holds in-window truth"));
        }
        if let Some(re) = input.re {
            if is_test(re, self.test) {
                self.flag(format!("{here} belongs to test condition Re = {re}"));
            }
        }
        match sha256_path(&path) {
            Ok(h) if h == input.sha256 => {}
            Ok(_) => self.flag(format!("{here} changed since it was consumed")),
            Err(_) => self.flag(format!("{here} is missing")),
        }
        match input.kind {
            InputKind::History => self.check_history(&here, input, &path),
            InputKind::KoopmanForecast | InputKind::LatentTable => {
                if !self.clean_outputs.contains_key(&input.path) {
                    self.flag(format!("{here} was not produced by an audited training stage"));
                }
                if input.kind == InputKind::LatentTable {
                    self.check_latents(&here, &path);
                }
            }
            InputKind::Future | InputKind::Model => {}
        }
    }

    fn check_history(&mut self, here: &str, input: &InputRecord, path: &Path) {
        match input.t_range {
            Some((_, last)) if last < self.t0 => {}
            Some((_, last)) => self.flag(format!("{here} reaches t = {last} ≥ T = {}", self.t0)),
            None => self.flag(format!("{here} has no recorded time range")),
        }
        match read_sidecar(path) {
            Ok(side) => {
                if side.t_end >= self.t0 {
                    self.flag(format!("{here} actually covers t = {} ≥ T", side.t_end));
                }
                if side.re.is_some_and(|re| is_test(re, self.test)) {
                    self.flag(format!("{here} is labelled with a test condition"));
                }
            }
            Err(_) => self.flag(format!("{here} has no readable sidecar")),
        }
    }

    fn check_latents(&mut self, here: &str, path: &Path) {
        match LatentTable::read(path) {
            Ok(table) => {
                if let Some(row) = table.rows.iter().find(|r| is_test(r.re, self.test)) {
                    self.flag(format!("{here} contains a row for test condition Re = {}", row.re));
                }
                if let Some(row) = table.rows.iter().find(|r| r.t < self.t0) {
                    self.flag(format!("{here} contains a row at t = {} before the window", row.t));
                }
            }
            Err(_) => self.flag(format!("{here} is not a readable latent table")),
        }
    }

    fn check_manifest(&mut self, dir: &Path) {
        let name = dir
            .strip_prefix(self.root)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| dir.display().to_string());
        let m = match StageManifest::read(dir) {
            Ok(m) => m,
            Err(e) => {
                self.flag(format!("{name}: unreadable manifest ({e})"));
                return;
            }
        };
        self.report.manifests_checked += 1;
        let before = self.report.violations.len();
        if m.evaluation_only {
            self.flag(format!("{name}: evaluation-only artifact in a training location"));
        }
        if let Some(re) = m.condition {
            if is_test(re, self.test) {
                self.flag(format!("{name}: trained for test condition Re = {re}"));
            }
        }
        for input in &m.inputs {
            self.check_input(&name, input);
        }
        for stale in m.stale_outputs(self.root) {
            self.flag(format!("{name}: output {stale} does not match its recorded hash"));
        }
        if self.report.violations.len() == before {
            for o in &m.outputs {
                self.clean_outputs.insert(o.path.clone(), m.stage.clone());
            }
        }
    }
}

fn subdirs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.exists() {
        return Ok(vec![]);
    }
    let mut out: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Audits the training artifacts of a run against the window start `t0` and the
/// test conditions.
pub fn audit_run(layout: &RunLayout, t0: i64, test: &[f64]) -> Result<AuditReport> {
    let root = layout.root.as_path();
    crate::seqio::require(root)?;
    let mut a = Auditor {
        root,
        t0,
        test,
        report: AuditReport::default(),
        clean_outputs: BTreeMap::new(),
    };
    for dir in subdirs(&root.join("sims"))? {
        if let Ok(m) = StageManifest::read(&dir) {
            if m.condition.is_some_and(|re| is_test(re, test)) {
                a.flag(format!(
                    "{}: test-condition truth outside eval/",
                    dir.display()
                ));
            }
        }
    }
    let kae_dirs = subdirs(&root.join("kae"))?;
    if kae_dirs.is_empty() {
        a.flag("no Koopman training artifacts found".into());
    }
    for dir in kae_dirs {
        a.check_manifest(&dir);
    }
    let rom = layout.rom_dir();
    a.check_manifest(&rom);
    if !a.clean_outputs.contains_key(&format!("rom/{LATENTS_FILE}")) {
        a.flag("rom: latent table was not produced by a clean ROM stage".into());
    }
    a.check_manifest(&layout.gp_dir());
    Ok(a.report)
}
