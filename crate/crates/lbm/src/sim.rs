//! Cylinder-wake simulation driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pistm_core::{FieldSource, FlowFieldSequence, Tensor};

use crate::error::{LbmError, Result};
use crate::lattice::{LatticeState, XBoundary};

/// Inflow speed in lattice units; low enough to stay incompressible across the Re range.
pub const DEFAULT_INFLOW_SPEED: f64 = 0.08;
pub const DEFAULT_WARMUP: usize = 5000;
/// Relative amplitude of the seeded transverse perturbation.
pub const PERTURBATION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub height: usize,
    pub width: usize,
    pub reynolds: f64,
    pub inflow_speed: f64,
    /// Cylinder centre `(x, y)` in lattice units.
    pub cylinder_center: (f64, f64),
    pub cylinder_radius: f64,
    pub warmup_steps: usize,
    pub sample_interval: usize,
    pub snapshots: usize,
    /// Time index of the first snapshot.
    pub t_start: i64,
    pub seed: u64,
}

impl SimulationConfig {
    /// Standard benchmark geometry on an `H×W` grid: diameter `H/8`, centre at
    /// `(W/4, H/2)`, sampling interval `2.5·D` steps (≥ 20 snapshots per shedding
    /// period for Strouhal numbers up to 0.25).
    pub fn cylinder(height: usize, width: usize, reynolds: f64) -> Self {
        let diameter = height as f64 / 8.0;
        Self {
            height,
            width,
            reynolds,
            inflow_speed: DEFAULT_INFLOW_SPEED,
            cylinder_center: (width as f64 / 4.0, height as f64 / 2.0),
            cylinder_radius: diameter / 2.0,
            warmup_steps: DEFAULT_WARMUP,
            sample_interval: ((2.5 * diameter).round() as usize).max(1),
            snapshots: 191,
            t_start: -181,
            seed: 0,
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.cylinder_radius
    }

    /// Kinematic viscosity from `Re = u_in · D / ν`.
    pub fn viscosity(&self) -> f64 {
        self.inflow_speed * self.diameter() / self.reynolds
    }

    /// BGK relaxation time, `ν = (τ − ½)/3`.
    pub fn tau(&self) -> f64 {
        3.0 * self.viscosity() + 0.5
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.snapshots * self.sample_interval
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(LbmError::Config(m));
        if !(self.reynolds > 0.0 && self.reynolds <= 1000.0) {
            return err(format!("Re = {} outside (0, 1000]", self.reynolds));
        }
        if !(self.inflow_speed > 0.0 && self.inflow_speed < crate::lattice::MAX_LATTICE_SPEED) {
            return err(format!("inflow speed {} outside (0, 0.3)", self.inflow_speed));
        }
        let tau = self.tau();
        if !(tau > 0.5 && tau <= 2.0) {
            return err(format!(
                "derived relaxation time {tau:.5} outside (0.5, 2.0] for Re = {}",
                self.reynolds
            ));
        }
        if self.height < 8 || self.width < 8 {
            return err(format!("grid {}×{} too small", self.height, self.width));
        }
        if self.snapshots == 0 || self.sample_interval == 0 {
            return err("snapshots and sample interval must be positive".into());
        }
        let (cx, cy) = self.cylinder_center;
        let r = self.cylinder_radius;
        if !(r >= 1.0) {
            return err(format!("cylinder radius {r} below one cell"));
        }
        if cx - r < 2.0 || cx + r > self.width as f64 - 3.0 {
            return err("cylinder must clear the inflow and outflow columns".into());
        }
        if cy - r < 1.0 || cy + r > self.height as f64 - 2.0 {
            return err("cylinder must not touch the top/bottom edges".into());
        }
        Ok(())
    }

    /// Solid cells of the disk `(x − cx)² + (y − cy)² ≤ r²`.
    pub fn obstacle_mask(&self) -> Vec<bool> {
        let (cx, cy) = self.cylinder_center;
        let r2 = self.cylinder_radius * self.cylinder_radius;
        let mut mask = vec![false; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                mask[y * self.width + x] = dx * dx + dy * dy <= r2;
            }
        }
        mask
    }

    /// Initial lattice: uniform inflow plus a seeded sinusoidal transverse velocity.
    pub fn initial_state(&self) -> Result<LatticeState> {
        self.validate()?;
        let u_in = self.inflow_speed;
        let mut state = LatticeState::uniform(
            self.height,
            self.width,
            self.tau(),
            1.0,
            [u_in, 0.0],
            XBoundary::InflowOutflow { u_in },
        )?
        .with_solid(self.obstacle_mask())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..self.height {
            for x in 0..self.width {
                if state.is_solid(y, x) {
                    continue;
                }
                let arg = std::f64::consts::TAU * x as f64 / self.width as f64 + phase;
                let uy = PERTURBATION * u_in * arg.sin();
                state.set_equilibrium(y, x, 1.0, [u_in, uy])?;
            }
        }
        Ok(state)
    }
}

/// Runs warmup, then records `|u|` every `sample_interval` steps.
pub fn run(config: &SimulationConfig) -> Result<FlowFieldSequence> {
    let mut state = config.initial_state()?;
    for _ in 0..config.warmup_steps {
        state.step()?;
    }
    let mut frames: Vec<Tensor> = Vec::with_capacity(config.snapshots);
    for _ in 0..config.snapshots {
        for _ in 0..config.sample_interval {
            state.step()?;
        }
        frames.push(state.velocity_magnitude());
    }
    Ok(FlowFieldSequence::from_frames(
        &frames,
        config.t_start,
        FieldSource::Simulation,
    )?)
}
