//! The pipeline stages. Each stage reads persisted inputs, writes its outputs
//! next to a [`StageManifest`], and is skipped when an identical manifest with
//! verifiable outputs already exists.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use pistm_core::{FieldSource, FlowFieldSequence, Tensor};
use pistm_lbm::SimulationConfig;
use pistm_surrogate::gp::predict_bundle;
use pistm_surrogate::koopman::forecast;
use pistm_surrogate::rom::extract_latent_table;
use pistm_surrogate::{
    train_kae, train_rom, ConvAutoencoder, GpBundle, GpBundleConfig, KaeTrainConfig, KoopmanModel, LatentTable,
    RomConfig, RomDataset,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{
    cache_key, cached, input_record, output_record, InputKind, RunLayout, StageManifest,
};
use crate::config::{ExperimentConfig, TimeWindow};
use crate::doe::DesignOfExperiments;
use crate::error::{PipelineError, Result, Stage};
use crate::metrics::{compute_metrics, parse_timing_csv, ErrorReport, Timing};
use crate::seqio::{read_sequence, read_sidecar, require, write_sequence};

pub const HISTORY_FILE: &str = "history.pstm";
pub const FUTURE_FILE: &str = "future.pstm";
pub const FORECAST_FILE: &str = "forecast.pstm";
pub const EMULATED_FILE: &str = "emulated.pstm";
pub const MODEL_DIR: &str = "model";
pub const LATENTS_FILE: &str = "latents.csv";

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration serializes")
}

/// Velocity magnitudes cannot be negative; learned outputs are clipped at zero.
fn clip_non_negative(t: Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

/// Runs one simulation and splits it at `window.t0` into `history.pstm`
/// (`t < T`) and `future.pstm` (`t ≥ T`, omitted when empty).
pub fn simulate_into(
    root: &Path,
    dir: &Path,
    sim: &SimulationConfig,
    window: &TimeWindow,
    evaluation_only: bool,
) -> Result<StageManifest> {
    let config = json!({ "simulation": to_json(sim), "t0": window.t0 });
    let key = cache_key(Stage::Simulate.name(), &config, &[]);
    if let Some(m) = cached(root, dir, &key) {
        info!("simulate Re = {}: cached", sim.reynolds);
        return Ok(m);
    }
    let started = Instant::now();
    let seq = pistm_lbm::run(sim)?;
    info!(
        "simulate Re = {}: {} steps in {:.1}s",
        sim.reynolds,
        sim.total_steps(),
        started.elapsed().as_secs_f64()
    );
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    if seq.t_start() < window.t0 {
        let path = dir.join(HISTORY_FILE);
        let hist = seq.window(seq.t_start(), (window.t0 - 1).min(seq.t_end()))?;
        write_sequence(&path, &hist, Some(sim.reynolds))?;
        outputs.push(output_record(root, &path)?);
    }
    if seq.t_end() >= window.t0 {
        let path = dir.join(FUTURE_FILE);
        let fut = seq.window(window.t0.max(seq.t_start()), seq.t_end())?;
        write_sequence(&path, &fut, Some(sim.reynolds))?;
        outputs.push(output_record(root, &path)?);
    }
    let manifest = StageManifest {
        stage: Stage::Simulate.name().into(),
        evaluation_only,
        condition: Some(sim.reynolds),
        cache_key: key,
        config,
        inputs: vec![],
        outputs,
        summary: json!({
            "tau": sim.tau(),
            "inflow_speed": sim.inflow_speed,
            "warmup_steps": sim.warmup_steps,
            "sample_interval": sim.sample_interval,
            "seed": sim.seed,
            "t_range": [seq.t_start(), seq.t_end()],
        }),
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Trains a Koopman autoencoder on `history` (which must end before `window.t0`)
/// and writes `model/` and the forecast over the window.
pub fn train_kae_into(
    root: &Path,
    history: &Path,
    dir: &Path,
    re: f64,
    cfg: &KaeTrainConfig,
    window: &TimeWindow,
    evaluation_only: bool,
) -> Result<StageManifest> {
    let side = read_sidecar(history)?;
    if side.t_end >= window.t0 {
        return Err(PipelineError::Contract(format!(
            "{} reaches t = {}, inside the forecast window starting at {}",
            history.display(),
            side.t_end,
            window.t0
        )));
    }
    if side.t_end != window.t0 - 1 {
        return Err(PipelineError::Contract(format!(
            "history must end at t = {}, {} ends at {}",
            window.t0 - 1,
            history.display(),
            side.t_end
        )));
    }
    let inputs = vec![input_record(
        root,
        history,
        InputKind::History,
        Some(re),
        Some((side.t_start, side.t_end)),
    )?];
    let config = json!({ "kae": to_json(cfg), "t0": window.t0, "horizon": window.horizon });
    let key = cache_key(Stage::TrainKae.name(), &config, &inputs);
    if let Some(m) = cached(root, dir, &key) {
        info!("train-kae Re = {re}: cached");
        return Ok(m);
    }
    let (seq, _) = read_sequence(history)?;
    let started = Instant::now();
    let model = train_kae(&seq, cfg)?;
    let report = model.report().cloned();
    info!(
        "train-kae Re = {re}: loss {:.3e} -> {:.3e} in {:.1}s",
        report.as_ref().map_or(f64::NAN, |r| r.initial.total),
        report.as_ref().map_or(f64::NAN, |r| r.last.total),
        started.elapsed().as_secs_f64()
    );
    let model_dir = dir.join(MODEL_DIR);
    model.save(&model_dir)?;
    let forecast_path = dir.join(FORECAST_FILE);
    let fc = koopman_forecast(&model, &seq, window)?;
    write_sequence(&forecast_path, &fc, Some(re))?;
    let manifest = StageManifest {
        stage: Stage::TrainKae.name().into(),
        evaluation_only,
        condition: Some(re),
        cache_key: key,
        config,
        inputs,
        outputs: vec![
            output_record(root, &model_dir)?,
            output_record(root, &forecast_path)?,
        ],
        summary: json!({
            "report": report,
            "consistency_error": model.consistency_error(),
            "forecast_t_range": [fc.t_start(), fc.t_end()],
        }),
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Forecast over the window seeded from the last history snapshot.
pub fn koopman_forecast(model: &KoopmanModel, history: &FlowFieldSequence, window: &TimeWindow) -> Result<FlowFieldSequence> {
    let last = history.frame(history.len() - 1);
    let fc = forecast(model, &last, window.horizon, window.t0)?;
    Ok(FlowFieldSequence::new(
        clip_non_negative(fc.into_tensor()),
        window.t0,
        FieldSource::Koopman,
    )?)
}

/// Trains the convolutional ROM on Koopman forecasts `(Re, path)` and writes
/// `model/` and the latent table.
pub fn train_rom_into(root: &Path, forecasts: &[(f64, PathBuf)], dir: &Path, cfg: &RomConfig) -> Result<StageManifest> {
    let inputs = forecasts
        .iter()
        .map(|(re, path)| {
            let side = read_sidecar(path)?;
            input_record(
                root,
                path,
                InputKind::KoopmanForecast,
                Some(*re),
                Some((side.t_start, side.t_end)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let config = json!({ "rom": to_json(cfg) });
    let key = cache_key(Stage::TrainRom.name(), &config, &inputs);
    if let Some(m) = cached(root, dir, &key) {
        info!("train-rom: cached");
        return Ok(m);
    }
    let sequences = forecasts
        .iter()
        .map(|(re, path)| Ok((*re, read_sequence(path)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = RomDataset::from_forecasts(&sequences, cfg.validation_fraction, cfg.seed)?;
    let started = Instant::now();
    let model = train_rom(&dataset, cfg)?;
    let report = model.report().cloned();
    info!(
        "train-rom: {} samples, train/validation error {:.4}/{:.4} in {:.1}s",
        dataset.samples().len(),
        report.as_ref().map_or(f64::NAN, |r| r.train_error),
        report.as_ref().map_or(f64::NAN, |r| r.validation_error),
        started.elapsed().as_secs_f64()
    );
    let model_dir = dir.join(MODEL_DIR);
    model.save(&model_dir)?;
    let table = extract_latent_table(&model, &sequences)?;
    let latents = dir.join(LATENTS_FILE);
    table.write(&latents)?;
    let manifest = StageManifest {
        stage: Stage::TrainRom.name().into(),
        evaluation_only: false,
        condition: None,
        cache_key: key,
        config,
        inputs,
        outputs: vec![output_record(root, &model_dir)?, output_record(root, &latents)?],
        summary: json!({ "report": report, "latent_rows": table.rows.len() }),
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Fits the GP bundle on a latent table; `Re` is normalized over `re_range`.
pub fn train_gp_into(
    root: &Path,
    latents: &Path,
    dir: &Path,
    cfg: &GpBundleConfig,
    re_range: (f64, f64),
) -> Result<StageManifest> {
    require(latents)?;
    let table = LatentTable::read(latents)?;
    let t_range = table
        .rows
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), r| (lo.min(r.t), hi.max(r.t)));
    let inputs = vec![input_record(root, latents, InputKind::LatentTable, None, Some(t_range))?];
    let config = json!({ "gp": to_json(cfg), "re_range": [re_range.0, re_range.1] });
    let key = cache_key(Stage::TrainGp.name(), &config, &inputs);
    if let Some(m) = cached(root, dir, &key) {
        info!("train-gp: cached");
        return Ok(m);
    }
    let started = Instant::now();
    let bundle = GpBundle::fit(&table, Some(re_range), cfg)?;
    info!(
        "train-gp: {} regressors on {} rows in {:.1}s",
        bundle.hypers().len(),
        table.rows.len(),
        started.elapsed().as_secs_f64()
    );
    let model_dir = dir.join(MODEL_DIR);
    bundle.save(&model_dir)?;
    let manifest = StageManifest {
        stage: Stage::TrainGp.name().into(),
        evaluation_only: false,
        condition: None,
        cache_key: key,
        config,
        inputs,
        outputs: vec![output_record(root, &model_dir)?],
        summary: json!({ "hypers": bundle.hypers(), "rows": table.rows.len() }),
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// The two models needed at test time.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub rom: ConvAutoencoder,
    pub gp: GpBundle,
}

impl Surrogate {
    pub fn load(rom_model: &Path, gp_model: &Path) -> Result<Self> {
        require(rom_model)?;
        require(gp_model)?;
        let rom = ConvAutoencoder::load(rom_model)?;
        let gp = GpBundle::load(gp_model)?;
        if rom.code_dim() != gp.code_dim() {
            return Err(PipelineError::Contract(format!(
                "ROM code size {} differs from GP output size {}",
                rom.code_dim(),
                gp.code_dim()
            )));
        }
        Ok(Self { rom, gp })
    }

    pub fn from_run(layout: &RunLayout) -> Result<Self> {
        Self::load(&layout.rom_dir().join(MODEL_DIR), &layout.gp_dir().join(MODEL_DIR))
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub sequence: FlowFieldSequence,
    /// Posterior latent variances, one row per time step.
    pub latent_variance: Vec<Vec<f64>>,
    pub extrapolated: bool,
}

/// Emulated fields over the window: `decode(GP mean(Re, t))` for every `t`.
pub fn predict_surrogate(surrogate: &Surrogate, re: f64, window: &TimeWindow) -> Result<Prediction> {
    let d = surrogate.gp.code_dim();
    let mut codes = Vec::with_capacity(window.forecast_len() * d);
    let mut latent_variance = Vec::with_capacity(window.forecast_len());
    let mut extrapolated = false;
    for t in window.forecast_times() {
        let p = predict_bundle(&surrogate.gp, re, t)?;
        extrapolated |= p.extrapolated;
        codes.extend_from_slice(&p.mean);
        latent_variance.push(p.variance);
    }
    if extrapolated {
        let (lo, hi) = surrogate.gp.re_range();
        warn!("Re = {re} lies outside the training range ({lo}, {hi}); prediction is an extrapolation");
    }
    let fields = surrogate
        .rom
        .decode_batch(&Tensor::new(&[window.forecast_len(), d], codes)?)?;
    let (h, w) = surrogate.rom.grid();
    let fields = clip_non_negative(fields.reshape(&[window.forecast_len(), h, w])?);
    Ok(Prediction {
        sequence: FlowFieldSequence::new(fields, window.t0, FieldSource::Emulated)?,
        latent_variance,
        extrapolated,
    })
}

fn staged<T>(stage: Stage, re: Option<f64>, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage, re))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub doe: DesignOfExperiments,
    pub kae: Vec<StageManifest>,
    pub rom: StageManifest,
    pub gp: StageManifest,
}

/// Writes the config and DoE, then runs simulate → train-kae (per training
/// condition) → train-rom → train-gp. Test conditions are never touched.
pub fn run_training(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<TrainingSummary> {
    cfg.validate()?;
    let root = &layout.root;
    fs::create_dir_all(root)?;
    fs::write(layout.config_file(), cfg.to_json())?;
    let doe = DesignOfExperiments::from_config(cfg)?;
    fs::write(layout.doe_file(), serde_json::to_string_pretty(&doe)? + "\n")?;
    let window = cfg.window;

    let kae: Vec<StageManifest> = doe
        .train
        .par_iter()
        .map(|&re| {
            let sim_dir = layout.sim_dir(re);
            staged(
                Stage::Simulate,
                Some(re),
                simulate_into(root, &sim_dir, &cfg.simulation(re), &window, false),
            )?;
            staged(
                Stage::TrainKae,
                Some(re),
                train_kae_into(
                    root,
                    &sim_dir.join(HISTORY_FILE),
                    &layout.kae_dir(re),
                    re,
                    &cfg.kae_for(re),
                    &window,
                    false,
                ),
            )
        })
        .collect::<Result<_>>()?;

    let mut forecasts: Vec<(f64, PathBuf)> = doe
        .train
        .iter()
        .map(|&re| (re, layout.kae_dir(re).join(FORECAST_FILE)))
        .collect();
    forecasts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rom = staged(
        Stage::TrainRom,
        None,
        train_rom_into(root, &forecasts, &layout.rom_dir(), &cfg.rom_config()),
    )?;
    let gp = staged(
        Stage::TrainGp,
        None,
        train_gp_into(
            root,
            &layout.rom_dir().join(LATENTS_FILE),
            &layout.gp_dir(),
            &cfg.gp_config(),
            doe.re_range,
        ),
    )?;
    Ok(TrainingSummary { doe, kae, rom, gp })
}

pub fn load_doe(layout: &RunLayout) -> Result<DesignOfExperiments> {
    let path = layout.doe_file();
    require(&path)?;
    serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
}

/// Both sides of the speedup ratio are timed this many times and report their median.
pub const TIMING_REPEATS: usize = 3;

/// Runs `f` [`TIMING_REPEATS`] times; returns the last result and the median seconds.
fn timed_median<T>(mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut seconds = Vec::with_capacity(TIMING_REPEATS);
    let mut last = None;
    for _ in 0..TIMING_REPEATS {
        let started = Instant::now();
        last = Some(f()?);
        seconds.push(started.elapsed().as_secs_f64());
    }
    seconds.sort_by(f64::total_cmp);
    Ok((last.expect("at least one repeat"), seconds[TIMING_REPEATS / 2]))
}

/// Median seconds for a fresh simulation reaching the end of the window:
/// warmup followed by the `k + 1` sampled snapshots.
pub fn time_window_simulation(cfg: &ExperimentConfig, re: f64) -> Result<f64> {
    let sim = cfg.simulation_snapshots(re, cfg.window.forecast_len(), cfg.window.t0);
    Ok(timed_median(|| Ok(pistm_lbm::run(&sim)?))?.1)
}

/// For every test condition: simulates truth and trains an evaluation-only
/// Koopman model on its history (both under `eval/`), times the surrogate
/// prediction against a simulation of the window, and writes the metrics,
/// timing and report files.
pub fn evaluate(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<ErrorReport> {
    let root = &layout.root;
    let doe = load_doe(layout)?;
    let window = cfg.window;
    let mut timings = Vec::new();
    for &re in &doe.test {
        let dir = layout.eval_dir(re);
        let sim_dir = dir.join("sim");
        staged(
            Stage::Evaluate,
            Some(re),
            simulate_into(root, &sim_dir, &cfg.simulation(re), &window, true),
        )?;
        staged(
            Stage::Evaluate,
            Some(re),
            train_kae_into(
                root,
                &sim_dir.join(HISTORY_FILE),
                &dir.join("kae"),
                re,
                &cfg.kae_for(re),
                &window,
                true,
            ),
        )?;
        let (pred, predict_seconds) = staged(
            Stage::Predict,
            Some(re),
            timed_median(|| predict_surrogate(&Surrogate::from_run(layout)?, re, &window)),
        )?;
        write_sequence(&dir.join(EMULATED_FILE), &pred.sequence, Some(re))?;
        let simulate_seconds = staged(Stage::Evaluate, Some(re), time_window_simulation(cfg, re))?;
        let timing = Timing {
            re,
            simulate_seconds,
            predict_seconds,
        };
        info!(
            "evaluate Re = {re}: predict {predict_seconds:.4}s, simulate {simulate_seconds:.2}s, speedup {:.0}x",
            timing.speedup()
        );
        timings.push(timing);
    }
    fs::write(
        layout.timing_csv(),
        ErrorReport::new(window, vec![], timings).timing_csv(),
    )?;
    let report = report_from_artifacts(cfg, layout)?;
    fs::write(layout.metrics_csv(), report.metrics_csv())?;
    fs::write(layout.report_json(), report.to_json())?;
    Ok(report)
}

/// Rebuilds the error report from the persisted evaluation files alone.
pub fn report_from_artifacts(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<ErrorReport> {
    let doe = load_doe(layout)?;
    let window = cfg.window;
    let conditions = doe
        .test
        .iter()
        .map(|&re| {
            let dir = layout.eval_dir(re);
            let (truth, _) = read_sequence(&dir.join("sim").join(FUTURE_FILE))?;
            let (koopman, _) = read_sequence(&dir.join("kae").join(FORECAST_FILE))?;
            let (emulated, _) = read_sequence(&dir.join(EMULATED_FILE))?;
            compute_metrics(re, &truth, &koopman, &emulated, &window)
        })
        .collect::<Result<Vec<_>>>()?;
    let timings = match fs::read_to_string(layout.timing_csv()) {
        Ok(text) => parse_timing_csv(&text)?,
        Err(_) => vec![],
    };
    Ok(ErrorReport::new(window, conditions, timings))
}

/// Training followed by evaluation.
pub fn run_all(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(TrainingSummary, ErrorReport)> {
    let summary = run_training(cfg, layout)?;
    let report = evaluate(cfg, layout)?;
    Ok((summary, report))
}
