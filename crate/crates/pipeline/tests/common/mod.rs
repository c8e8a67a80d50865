#![allow(dead_code)]

use pistm_pipeline::config::{DoeConfig, GridConfig};
use pistm_pipeline::ExperimentConfig;
use pistm_surrogate::{KaeTrainConfig, RomConfig};

/// A run small enough for debug builds: 32×32 grid, four conditions, short window.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.grid = GridConfig {
        height: 32,
        width: 32,
    };
    cfg.doe = DoeConfig {
        n_train: 4,
        re_min: 50.0,
        re_max: 150.0,
        test: vec![100.0],
    };
    cfg.window.history = 12;
    cfg.window.horizon = 3;
    cfg.lbm.warmup_steps = 150;
    cfg.lbm.sample_interval = Some(5);
    cfg.kae = KaeTrainConfig {
        latent_dim: 3,
        hidden: 6,
        horizon: 2,
        epochs: 3,
        batch_size: 4,
        ..KaeTrainConfig::default()
    };
    cfg.rom = RomConfig {
        code_dim: 3,
        channels: vec![2, 4],
        epochs: 2,
        batch_size: 8,
        ..RomConfig::default()
    };
    cfg.gp.fit.restarts = 2;
    cfg.gp.fit.iterations = 20;
    cfg
}
