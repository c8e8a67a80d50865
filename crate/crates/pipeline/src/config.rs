//! Experiment configuration, loaded from JSON with defaults for every field.

use std::path::Path;

use pistm_lbm::SimulationConfig;
use pistm_surrogate::{GpBundleConfig, KaeTrainConfig, RomConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, PipelineError, Result};

pub const DEFAULT_GRID: usize = 80;
pub const DEFAULT_TRAIN_CONDITIONS: usize = 45;
pub const DEFAULT_RE_RANGE: (f64, f64) = (50.0, 800.0);
pub const DEFAULT_TEST_CONDITIONS: [f64; 5] = [83.0, 172.0, 218.0, 406.0, 594.0];
pub const DEFAULT_T0: i64 = 0;
pub const DEFAULT_HISTORY: usize = 181;
pub const DEFAULT_HORIZON: usize = 9;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: DEFAULT_GRID,
            width: DEFAULT_GRID,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoeConfig {
    pub n_train: usize,
    pub re_min: f64,
    pub re_max: f64,
    pub test: Vec<f64>,
}

impl Default for DoeConfig {
    fn default() -> Self {
        Self {
            n_train: DEFAULT_TRAIN_CONDITIONS,
            re_min: DEFAULT_RE_RANGE.0,
            re_max: DEFAULT_RE_RANGE.1,
            test: DEFAULT_TEST_CONDITIONS.to_vec(),
        }
    }
}

/// History `t = T−h … T−1` and forecast window `t = T … T+k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeWindow {
    /// `T`, the first forecast time index.
    pub t0: i64,
    /// `h`, number of history snapshots.
    pub history: usize,
    /// `k`; the forecast covers `k + 1` snapshots.
    pub horizon: usize,
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self {
            t0: DEFAULT_T0,
            history: DEFAULT_HISTORY,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl TimeWindow {
    pub fn validate(&self) -> Result<()> {
        if self.history <= 1 {
            return config_err(format!("history length h = {} must exceed 1", self.history));
        }
        Ok(())
    }

    pub fn history_start(&self) -> i64 {
        self.t0 - self.history as i64
    }

    pub fn forecast_end(&self) -> i64 {
        self.t0 + self.horizon as i64
    }

    pub fn forecast_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn forecast_times(&self) -> impl Iterator<Item = i64> {
        self.t0..=self.forecast_end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbmConfig {
    pub inflow_speed: f64,
    pub warmup_steps: usize,
    /// Steps between snapshots; `None` uses `round(2.5·D)`.
    pub sample_interval: Option<usize>,
}

impl Default for LbmConfig {
    fn default() -> Self {
        Self {
            inflow_speed: pistm_lbm::sim::DEFAULT_INFLOW_SPEED,
            warmup_steps: pistm_lbm::sim::DEFAULT_WARMUP,
            sample_interval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub grid: GridConfig,
    pub doe: DoeConfig,
    pub window: TimeWindow,
    pub lbm: LbmConfig,
    pub kae: KaeTrainConfig,
    pub rom: RomConfig,
    pub gp: GpBundleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            grid: GridConfig::default(),
            doe: DoeConfig::default(),
            window: TimeWindow::default(),
            lbm: LbmConfig::default(),
            kae: KaeTrainConfig::default(),
            rom: RomConfig::default(),
            gp: GpBundleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingInput {
                path: path.to_path_buf(),
            },
            _ => e.into(),
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        let d = &self.doe;
        if d.n_train == 0 {
            return config_err("at least one training condition is required");
        }
        if !(d.re_min < d.re_max) || !(d.re_min > 0.0) {
            return config_err(format!("invalid Re range ({}, {})", d.re_min, d.re_max));
        }
        for &re in &d.test {
            if !(re > d.re_min && re < d.re_max) {
                return config_err(format!("test condition Re = {re} outside ({}, {})", d.re_min, d.re_max));
            }
        }
        if self.grid.height < 16 || self.grid.width < 16 {
            return config_err("grid must be at least 16×16");
        }
        self.kae
            .validate(self.window.history)
            .map_err(|e| PipelineError::Config(format!("kae: {e}")))?;
        pistm_surrogate::rom::shape_plan(self.grid.height, self.grid.width, &self.rom)
            .map_err(|e| PipelineError::Config(format!("rom: {e}")))?;
        Ok(())
    }

    /// Simulation of condition `re` covering history and forecast window.
    pub fn simulation(&self, re: f64) -> SimulationConfig {
        self.simulation_snapshots(re, self.window.history + self.window.forecast_len(), self.window.history_start())
    }

    /// Simulation with `snapshots` samples after warmup, first stamped `t_start`.
    /// Every condition starts from the same seeded perturbation.
    pub fn simulation_snapshots(&self, re: f64, snapshots: usize, t_start: i64) -> SimulationConfig {
        let mut sim = SimulationConfig::cylinder(self.grid.height, self.grid.width, re);
        sim.inflow_speed = self.lbm.inflow_speed;
        sim.warmup_steps = self.lbm.warmup_steps;
        if let Some(i) = self.lbm.sample_interval {
            sim.sample_interval = i;
        }
        sim.snapshots = snapshots;
        sim.t_start = t_start;
        sim.seed = derive_seed(self.seed, "lbm", None);
        sim
    }

    pub fn kae_for(&self, re: f64) -> KaeTrainConfig {
        KaeTrainConfig {
            seed: derive_seed(self.seed, "kae", Some(re)),
            ..self.kae.clone()
        }
    }

    pub fn rom_config(&self) -> RomConfig {
        RomConfig {
            seed: derive_seed(self.seed, "rom", None),
            ..self.rom.clone()
        }
    }

    pub fn gp_config(&self) -> GpBundleConfig {
        let mut gp = self.gp.clone();
        gp.fit.seed = derive_seed(self.seed, "gp", None);
        gp
    }

    pub fn doe_seed(&self) -> u64 {
        derive_seed(self.seed, "doe", None)
    }

    /// Reduced reproduction that fits a desktop: 64×64 grid, 15 LHS conditions over
    /// (50, 300), `h = 100`, `k = 9`, test conditions 130 and 220, and a narrower
    /// Koopman autoencoder (64 hidden units, learning rate 2e-3).
    pub fn desk_scale() -> Self {
        let mut cfg = Self::default();
        cfg.grid = GridConfig {
            height: 64,
            width: 64,
        };
        cfg.doe = DoeConfig {
            n_train: 15,
            re_min: 50.0,
            re_max: 300.0,
            test: vec![130.0, 220.0],
        };
        cfg.window.history = 100;
        cfg.kae.hidden = 64;
        cfg.kae.learning_rate = 2e-3;
        cfg
    }
}

/// Stage seed from the master seed, a label and an optional condition.
pub fn derive_seed(master: u64, label: &str, condition: Option<f64>) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    if let Some(re) = condition {
        h.update(re.to_bits().to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
