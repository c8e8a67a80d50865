mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use pistm_pipeline::artifacts::condition_tag;
use pistm_pipeline::stages::{report_from_artifacts, simulate_into, train_kae_into, train_rom_into, FORECAST_FILE, HISTORY_FILE};
use pistm_pipeline::{audit_run, run_all, ExperimentConfig, RunLayout};
use serde_json::Value;

/// One tiny run shared by every test here; tests work on copies.
fn base_run() -> &'static (ExperimentConfig, PathBuf) {
    static RUN: OnceLock<(ExperimentConfig, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tiny-run");
        let _ = fs::remove_dir_all(&dir);
        let cfg = common::tiny_config();
        run_all(&cfg, &RunLayout::new(&dir)).unwrap();
        (cfg, dir)
    })
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

fn copy_run(name: &str) -> (ExperimentConfig, tempfile::TempDir, RunLayout) {
    let (cfg, src) = base_run();
    let tmp = tempfile::tempdir().unwrap();
    let dst = tmp.path().join(name);
    copy_dir(src, &dst);
    (cfg.clone(), tmp, RunLayout::new(dst))
}

fn violations(cfg: &ExperimentConfig, layout: &RunLayout) -> Vec<String> {
    audit_run(layout, cfg.window.t0, &cfg.doe.test).unwrap().violations
}

fn first_kae_dir(layout: &RunLayout) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(layout.root.join("kae"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dirs.sort();
    dirs.remove(0)
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut Value)) {
    let path = dir.join("manifest.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn clean_run_passes_audit() {
    let (cfg, dir) = base_run();
    let report = audit_run(&RunLayout::new(dir), cfg.window.t0, &cfg.doe.test).unwrap();
    assert!(report.passed(), "{:?}", report.violations);
    assert_eq!(report.manifests_checked, cfg.doe.n_train + 2);
    assert!(report.inputs_checked >= 2 * cfg.doe.n_train + 1);
}

#[test]
fn run_writes_expected_files() {
    let (cfg, dir) = base_run();
    let layout = RunLayout::new(dir);
    let metrics = fs::read_to_string(layout.metrics_csv()).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("re,t,eps_E,eps_KE,eps_K"));
    assert_eq!(lines.count(), cfg.doe.test.len() * cfg.window.forecast_len());
    let timing = fs::read_to_string(layout.timing_csv()).unwrap();
    assert_eq!(timing.lines().count(), 1 + cfg.doe.test.len());
    for re in &cfg.doe.test {
        let eval = layout.eval_dir(*re);
        assert!(eval.join("emulated.pstm").exists());
        assert!(!layout.kae_dir(*re).exists() && !layout.sim_dir(*re).exists());
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(layout.report_json()).unwrap()).unwrap();
    assert_eq!(report["error_definition"], pistm_pipeline::metrics::ERROR_DEFINITION);
}

#[test]
fn report_regenerates_bit_identically() {
    let (cfg, dir) = base_run();
    let layout = RunLayout::new(dir);
    let again = report_from_artifacts(cfg, &layout).unwrap();
    assert_eq!(again.to_json().as_bytes(), fs::read(layout.report_json()).unwrap().as_slice());
    assert_eq!(again.metrics_csv().as_bytes(), fs::read(layout.metrics_csv()).unwrap().as_slice());
}

#[test]
fn rerun_reuses_cached_stages() {
    let (cfg, _tmp, layout) = copy_run("rerun");
    let before = fs::read(layout.rom_dir().join("manifest.json")).unwrap();
    let report_before = fs::read(layout.report_json()).unwrap();
    run_all(&cfg, &layout).unwrap();
    assert_eq!(before, fs::read(layout.rom_dir().join("manifest.json")).unwrap());
    assert_eq!(report_before, fs::read(layout.report_json()).unwrap());
    assert!(violations(&cfg, &layout).is_empty());
}

#[test]
fn audit_catches_modified_history() {
    let (cfg, _tmp, layout) = copy_run("tampered");
    let sims: Vec<PathBuf> = fs::read_dir(layout.root.join("sims")).unwrap().map(|e| e.unwrap().path()).collect();
    let history = sims[0].join(HISTORY_FILE);
    let mut bytes = fs::read(&history).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&history, bytes).unwrap();
    let v = violations(&cfg, &layout);
    assert!(v.iter().any(|m| m.contains("changed since it was consumed")), "{v:?}");
}

#[test]
fn audit_catches_window_truth_in_history() {
    let (cfg, _tmp, layout) = copy_run("future");
    let kae = first_kae_dir(&layout);
    edit_manifest(&kae, |m| {
        m["inputs"][0]["t_range"][1] = Value::from(cfg.window.t0);
    });
    let v = violations(&cfg, &layout);
    assert!(v.iter().any(|m| m.contains("≥ T")), "{v:?}");
    // The ROM consumed that model's forecast, so its provenance no longer traces.
    assert!(v.iter().any(|m| m.contains("not produced by an audited training stage")), "{v:?}");
}

#[test]
fn audit_catches_future_file_as_input() {
    let (cfg, _tmp, layout) = copy_run("future-file");
    let kae = first_kae_dir(&layout);
    edit_manifest(&kae, |m| {
        let path = m["inputs"][0]["path"].as_str().unwrap().replace(HISTORY_FILE, "future.pstm");
        m["inputs"][0]["path"] = Value::from(path);
        m["inputs"][0]["kind"] = Value::from("future");
    });
    let v = violations(&cfg, &layout);
    assert!(v.iter().any(|m| m.contains("in-window truth")), "{v:?}");
}

#[test]
fn audit_catches_evaluation_artifacts_in_training() {
    let (cfg, _tmp, layout) = copy_run("eval-leak");
    let kae = first_kae_dir(&layout);
    edit_manifest(&kae, |m| m["evaluation_only"] = Value::from(true));
    let rom = layout.rom_dir();
    let test_re = cfg.doe.test[0];
    edit_manifest(&rom, |m| {
        let inputs = m["inputs"].as_array_mut().unwrap();
        let mut leaked = inputs[0].clone();
        leaked["path"] = Value::from(format!("eval/{}/kae/{FORECAST_FILE}", condition_tag(test_re)));
        inputs.push(leaked);
    });
    let v = violations(&cfg, &layout);
    assert!(v.iter().any(|m| m.contains("evaluation-only artifact in a training location")), "{v:?}");
    assert!(v.iter().any(|m| m.contains("is an evaluation-only artifact")), "{v:?}");
}

#[test]
fn audit_catches_test_condition_in_training() {
    let (cfg, _tmp, layout) = copy_run("test-leak");
    let root = layout.root.clone();
    let re = cfg.doe.test[0];
    let sim_dir = layout.sim_dir(re);
    simulate_into(&root, &sim_dir, &cfg.simulation(re), &cfg.window, false).unwrap();
    train_kae_into(&root, &sim_dir.join(HISTORY_FILE), &layout.kae_dir(re), re, &cfg.kae_for(re), &cfg.window, false)
        .unwrap();
    let mut forecasts: Vec<(f64, PathBuf)> = cfg
        .doe
        .test
        .iter()
        .chain(&pistm_pipeline::stages::load_doe(&layout).unwrap().train)
        .map(|&r| (r, layout.kae_dir(r).join(FORECAST_FILE)))
        .collect();
    forecasts.sort_by(|a, b| a.0.total_cmp(&b.0));
    train_rom_into(&root, &forecasts, &layout.rom_dir(), &cfg.rom_config()).unwrap();
    let v = violations(&cfg, &layout);
    for needle in [
        "test-condition truth outside eval/",
        "trained for test condition",
        "belongs to test condition",
    ] {
        assert!(v.iter().any(|m| m.contains(needle)), "missing `{needle}` in {v:?}");
    }
}

#[test]
fn audit_requires_training_artifacts() {
    let (cfg, _tmp, layout) = copy_run("empty");
    fs::remove_dir_all(layout.root.join("kae")).unwrap();
    let v = violations(&cfg, &layout);
    assert!(!v.is_empty());
}
