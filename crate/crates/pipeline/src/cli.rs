//! The `pistm` command line.
//!
//! Settings resolve as flag > config file > built-in default. Failures print one
//! line `error: <category>: <message>` on stderr and exit with status 1; usage
//! errors exit with status 2.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use pistm_surrogate::{KoopmanModel, LatentTable};

use crate::artifacts::RunLayout;
use crate::audit::audit_run;
use crate::config::ExperimentConfig;
use crate::doe::DesignOfExperiments;
use crate::error::{PipelineError, Result};
use crate::render::{abs_difference, render, ColorMap};
use crate::seqio::{read_sequence, read_sidecar, require, write_sequence};
use crate::stages::{
    evaluate, koopman_forecast, predict_surrogate, run_all, simulate_into, train_gp_into, train_kae_into,
    train_rom_into, Surrogate, FORECAST_FILE, HISTORY_FILE, MODEL_DIR,
};

fn dflt(text: &str, v: impl Display) -> String {
    format!("{text} [default: {v}]")
}

fn req(text: &str) -> String {
    format!("{text} [required]")
}

fn defaults() -> ExperimentConfig {
    ExperimentConfig::default()
}

#[derive(Debug, Parser)]
#[command(name = "pistm", version, about = "Physics-informed spatio-temporal surrogate pipeline")]
pub struct Cli {
    #[arg(long, global = true, value_name = "PATH", help = dflt("Experiment config file (JSON)", "built-in defaults"))]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N", help = dflt("Master seed", defaults().seed))]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N", help = dflt("Worker threads", "all cores"))]
    pub threads: Option<usize>,
    #[arg(long, global = true, help = dflt("Log progress to stderr", false))]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Latin hypercube design of training conditions.
    Doe(DoeArgs),
    /// Simulate one condition; writes history and in-window truth separately.
    Simulate(SimulateArgs),
    /// Train a Koopman autoencoder on a simulation's history.
    TrainKae(TrainKaeArgs),
    /// Forecast the window with a trained Koopman autoencoder.
    Forecast(ForecastArgs),
    /// Train the convolutional ROM on Koopman forecasts and write the latent table.
    TrainRom(TrainRomArgs),
    /// Fit the Gaussian-process bundle on a latent table.
    TrainGp(TrainGpArgs),
    /// Emulate the window at a new condition.
    Predict(PredictArgs),
    /// Evaluate a trained run on its test conditions.
    Evaluate(RunArgs),
    /// Train and evaluate a complete run.
    RunAll(RunAllArgs),
    /// Check a run's training artifacts for data leakage.
    Audit(RunArgs),
    /// Write a P6 heatmap of one snapshot (or of |a − b|).
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct DoeArgs {
    #[arg(long, help = dflt("Number of training conditions", defaults().doe.n_train))]
    pub n: Option<usize>,
    #[arg(long, help = dflt("Lower Re bound", defaults().doe.re_min))]
    pub min: Option<f64>,
    #[arg(long, help = dflt("Upper Re bound", defaults().doe.re_max))]
    pub max: Option<f64>,
    #[arg(long, help = req("Output JSON file"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, help = req("Reynolds number"))]
    pub re: f64,
    #[arg(long, value_name = "HxW", value_parser = parse_grid, help = dflt("Grid size", format!("{}x{}", defaults().grid.height, defaults().grid.width)))]
    pub grid: Option<(usize, usize)>,
    #[arg(long, help = dflt("Snapshots recorded after warmup", defaults().window.history + defaults().window.forecast_len()))]
    pub snapshots: Option<usize>,
    #[arg(long, help = dflt("Warmup steps", defaults().lbm.warmup_steps))]
    pub warmup: Option<usize>,
    #[arg(long, help = dflt("Steps between snapshots", "2.5 cylinder diameters"))]
    pub interval: Option<usize>,
    #[arg(long, help = req("Output directory"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainKaeArgs {
    #[arg(long, help = req("Simulation directory containing history.pstm"))]
    pub data: PathBuf,
    #[arg(long, help = dflt("Latent dimension", defaults().kae.latent_dim))]
    pub latent: Option<usize>,
    #[arg(long, help = dflt("Training epochs", defaults().kae.epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = dflt("Hidden layer width", defaults().kae.hidden))]
    pub hidden: Option<usize>,
    #[arg(long, help = dflt("Loss prediction horizon", defaults().kae.horizon))]
    pub horizon: Option<usize>,
    #[arg(long, help = req("Output directory"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long, help = req("Trained Koopman model directory"))]
    pub model: PathBuf,
    #[arg(long, help = req("History sequence file"))]
    pub history: PathBuf,
    #[arg(long, help = dflt("Forecast steps beyond T", defaults().window.horizon))]
    pub k: Option<usize>,
    #[arg(long, help = req("Output sequence file"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainRomArgs {
    #[arg(long, help = req("Directory whose subdirectories hold forecast.pstm files"))]
    pub data: PathBuf,
    #[arg(long, help = dflt("Latent code size", defaults().rom.code_dim))]
    pub code_dim: Option<usize>,
    #[arg(long, help = dflt("Training epochs", defaults().rom.epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = req("Output directory"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainGpArgs {
    #[arg(long, help = req("Latent table CSV"))]
    pub latents: PathBuf,
    #[arg(long, help = dflt("Lower Re of the input normalization", defaults().doe.re_min))]
    pub re_min: Option<f64>,
    #[arg(long, help = dflt("Upper Re of the input normalization", defaults().doe.re_max))]
    pub re_max: Option<f64>,
    #[arg(long, help = dflt("Fit one GP per timestep instead of using t as an input", defaults().gp.per_timestep))]
    pub per_timestep: bool,
    #[arg(long, help = req("Output directory"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, help = req("ROM directory"))]
    pub rom: PathBuf,
    #[arg(long, help = req("GP directory"))]
    pub gp: PathBuf,
    #[arg(long, help = req("Reynolds number"))]
    pub re: f64,
    #[arg(long, help = req("Output sequence file"))]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, help = req("Run directory"))]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunAllArgs {
    #[arg(long, help = req("Run directory"))]
    pub run: PathBuf,
    #[arg(long, value_enum, help = dflt("Built-in settings used without --config", "full"))]
    pub preset: Option<Preset>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-scale settings: 80×80 grid, 45 conditions over (50, 800), h = 181.
    Full,
    /// 64×64 grid, 15 conditions over (50, 300), h = 100.
    Desk,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, help = req("Sequence file"))]
    pub field: PathBuf,
    #[arg(long, help = dflt("Sequence file subtracted before rendering |a − b|", "none"))]
    pub minus: Option<PathBuf>,
    #[arg(long, help = dflt("Snapshot index", 0))]
    pub frame: Option<usize>,
    #[arg(long, value_enum, help = dflt("Color map", "heat"))]
    pub cmap: Option<ColorMap>,
    #[arg(long, help = req("Output .ppm file"))]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(h)?, p(w)?))
}

fn base_config(cli: &Cli, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match preset {
            Some(Preset::Desk) => ExperimentConfig::desk_scale(),
            _ => ExperimentConfig::default(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// The config stored in a run directory unless `--config` overrides it.
fn run_config(cli: &Cli, run: &Path) -> Result<ExperimentConfig> {
    let layout = RunLayout::new(run);
    if cli.config.is_none() && layout.config_file().exists() {
        let mut cfg = ExperimentConfig::load(layout.config_file())?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        return Ok(cfg);
    }
    base_config(cli, None)
}

/// Absolute form of an output directory, created if needed.
fn out_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.canonicalize()?)
}

/// Common ancestor of a set of absolute paths.
fn common_root(paths: &[&Path]) -> PathBuf {
    let mut root = paths[0].to_path_buf();
    while !paths.iter().all(|p| p.starts_with(&root)) {
        if !root.pop() {
            break;
        }
    }
    root
}

fn absolute(path: &Path) -> Result<PathBuf> {
    require(path)?;
    Ok(path.canonicalize()?)
}

/// `dir/model` when present, else `dir`.
fn model_dir(dir: &Path) -> PathBuf {
    let nested = dir.join(MODEL_DIR);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Doe(a) => {
            let mut cfg = base_config(cli, None)?;
            cfg.doe.n_train = a.n.unwrap_or(cfg.doe.n_train);
            cfg.doe.re_min = a.min.unwrap_or(cfg.doe.re_min);
            cfg.doe.re_max = a.max.unwrap_or(cfg.doe.re_max);
            let (lo, hi) = (cfg.doe.re_min, cfg.doe.re_max);
            cfg.doe.test.retain(|&re| re > lo && re < hi);
            let doe = DesignOfExperiments::from_config(&cfg)?;
            if let Some(parent) = a.out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&a.out, serde_json::to_string_pretty(&doe)? + "\n")?;
            println!("{} training conditions written to {}", doe.train.len(), a.out.display());
        }
        Command::Simulate(a) => {
            let mut cfg = base_config(cli, None)?;
            if let Some((h, w)) = a.grid {
                cfg.grid.height = h;
                cfg.grid.width = w;
            }
            cfg.lbm.warmup_steps = a.warmup.unwrap_or(cfg.lbm.warmup_steps);
            if a.interval.is_some() {
                cfg.lbm.sample_interval = a.interval;
            }
            let snapshots = a
                .snapshots
                .unwrap_or(cfg.window.history + cfg.window.forecast_len());
            let sim = cfg.simulation_snapshots(a.re, snapshots, cfg.window.history_start());
            let dir = out_dir(&a.out)?;
            let m = simulate_into(&dir, &dir, &sim, &cfg.window, false)?;
            for o in &m.outputs {
                println!("{}", dir.join(&o.path).display());
            }
        }
        Command::TrainKae(a) => {
            let mut cfg = base_config(cli, None)?;
            cfg.kae.latent_dim = a.latent.unwrap_or(cfg.kae.latent_dim);
            cfg.kae.epochs = a.epochs.unwrap_or(cfg.kae.epochs);
            cfg.kae.hidden = a.hidden.unwrap_or(cfg.kae.hidden);
            cfg.kae.horizon = a.horizon.unwrap_or(cfg.kae.horizon);
            let history = absolute(&a.data.join(HISTORY_FILE))?;
            let side = read_sidecar(&history)?;
            let re = side
                .re
                .ok_or_else(|| PipelineError::Format("history sidecar lacks Re".into()))?;
            let mut window = cfg.window;
            window.t0 = side.t_end + 1;
            let out = out_dir(&a.out)?;
            let root = common_root(&[&history, &out]);
            let m = train_kae_into(&root, &history, &out, re, &cfg.kae_for(re), &window, false)?;
            println!("{}", serde_json::to_string(&m.summary)?);
        }
        Command::Forecast(a) => {
            let cfg = base_config(cli, None)?;
            let k = a.k.unwrap_or(cfg.window.horizon);
            require(&a.model)?;
            let model = KoopmanModel::load(model_dir(&a.model))?;
            let (history, side) = read_sequence(&a.history)?;
            let window = crate::config::TimeWindow {
                t0: history.t_end() + 1,
                history: history.len(),
                horizon: k,
            };
            let fc = koopman_forecast(&model, &history, &window)?;
            write_sequence(&a.out, &fc, side.re)?;
            println!("t = {}..{} written to {}", fc.t_start(), fc.t_end(), a.out.display());
        }
        Command::TrainRom(a) => {
            let mut cfg = base_config(cli, None)?;
            cfg.rom.code_dim = a.code_dim.unwrap_or(cfg.rom.code_dim);
            cfg.rom.epochs = a.epochs.unwrap_or(cfg.rom.epochs);
            let data = absolute(&a.data)?;
            let mut forecasts = Vec::new();
            let mut entries: Vec<PathBuf> = fs::read_dir(&data)?
                .filter_map(|e| e.ok().map(|e| e.path().join(FORECAST_FILE)))
                .filter(|p| p.exists())
                .collect();
            entries.sort();
            for path in entries {
                let re = read_sidecar(&path)?
                    .re
                    .ok_or_else(|| PipelineError::Format(format!("{} lacks Re", path.display())))?;
                forecasts.push((re, path));
            }
            if forecasts.is_empty() {
                return Err(PipelineError::MissingInput {
                    path: data.join("*").join(FORECAST_FILE),
                });
            }
            let out = out_dir(&a.out)?;
            let root = common_root(&[&data, &out]);
            let m = train_rom_into(&root, &forecasts, &out, &cfg.rom_config())?;
            println!("{}", serde_json::to_string(&m.summary)?);
        }
        Command::TrainGp(a) => {
            let mut cfg = base_config(cli, None)?;
            if a.per_timestep {
                cfg.gp.per_timestep = true;
            }
            let latents = absolute(&a.latents)?;
            let range = (
                a.re_min.unwrap_or(cfg.doe.re_min),
                a.re_max.unwrap_or(cfg.doe.re_max),
            );
            LatentTable::read(&latents)?;
            let out = out_dir(&a.out)?;
            let root = common_root(&[&latents, &out]);
            let m = train_gp_into(&root, &latents, &out, &cfg.gp_config(), range)?;
            println!("{}", serde_json::to_string(&m.summary)?);
        }
        Command::Predict(a) => {
            let cfg = base_config(cli, None)?;
            let surrogate = Surrogate::load(&model_dir(&a.rom), &model_dir(&a.gp))?;
            let (t_lo, t_hi) = surrogate.gp.t_range();
            let window = crate::config::TimeWindow {
                t0: t_lo,
                history: cfg.window.history,
                horizon: (t_hi - t_lo) as usize,
            };
            let pred = predict_surrogate(&surrogate, a.re, &window)?;
            write_sequence(&a.out, &pred.sequence, Some(a.re))?;
            if pred.extrapolated {
                eprintln!("warning: Re = {} is outside the training range", a.re);
            }
            println!(
                "t = {}..{} written to {}",
                pred.sequence.t_start(),
                pred.sequence.t_end(),
                a.out.display()
            );
        }
        Command::Evaluate(a) => {
            let cfg = run_config(cli, &a.run)?;
            let report = evaluate(&cfg, &RunLayout::new(&a.run))?;
            print_report(&report);
        }
        Command::RunAll(a) => {
            let cfg = base_config(cli, a.preset)?;
            let layout = RunLayout::new(&a.run);
            let (summary, report) = run_all(&cfg, &layout)?;
            let audit = audit_run(&layout, cfg.window.t0, &summary.doe.test)?;
            print_report(&report);
            println!(
                "audit: {} manifests, {} inputs, {} violations",
                audit.manifests_checked,
                audit.inputs_checked,
                audit.violations.len()
            );
            audit.into_result()?;
        }
        Command::Audit(a) => {
            let cfg = run_config(cli, &a.run)?;
            let layout = RunLayout::new(&a.run);
            let doe = crate::stages::load_doe(&layout)?;
            let report = audit_run(&layout, cfg.window.t0, &doe.test)?;
            for v in &report.violations {
                println!("violation: {v}");
            }
            println!(
                "audit: {} manifests, {} inputs, {} violations",
                report.manifests_checked,
                report.inputs_checked,
                report.violations.len()
            );
            report.into_result()?;
        }
        Command::Render(a) => {
            let (seq, _) = read_sequence(&a.field)?;
            let i = a.frame.unwrap_or(0);
            if i >= seq.len() {
                return Err(PipelineError::Contract(format!(
                    "frame {i} out of range for {} snapshots",
                    seq.len()
                )));
            }
            let mut values = seq.frame(i).into_data();
            if let Some(other) = &a.minus {
                let (b, _) = read_sequence(other)?;
                if (b.height(), b.width()) != (seq.height(), seq.width()) || i >= b.len() {
                    return Err(PipelineError::Contract(format!(
                        "difference inputs differ: {}×{}×{} vs {}×{}×{}",
                        seq.len(),
                        seq.height(),
                        seq.width(),
                        b.len(),
                        b.height(),
                        b.width()
                    )));
                }
                values = abs_difference(&values, b.frame(i).data())?;
            }
            let img = render(&values, seq.height(), seq.width(), a.cmap.unwrap_or(ColorMap::Heat))?;
            if let Some(parent) = a.out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&a.out, &img.bytes)?;
            println!("{} {}", img.range.0, img.range.1);
        }
    }
    Ok(())
}

fn print_report(report: &crate::metrics::ErrorReport) {
    for c in &report.conditions {
        println!(
            "Re = {}: eps_KE mean {:.4} spread {:.4}; eps_E mean {:.4}; eps_K mean {:.4}",
            c.re,
            c.eps_ke.mean,
            c.eps_ke.spread(),
            c.eps_e.mean,
            c.eps_k.mean
        );
    }
    for t in &report.timings {
        println!("Re = {}: speedup {:.0}x", t.re, t.speedup());
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: config.invalid: --threads must be positive");
            return 1;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(()) => {
            info!("done");
            0
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}
