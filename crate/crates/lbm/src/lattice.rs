//! D2Q9 lattice, BGK collision and pull streaming with half-way bounce-back.

use pistm_core::Tensor;

use crate::error::{LbmError, Result};

/// Lattice directions: rest, the four axis neighbours, then the diagonals.
pub const CX: [i32; 9] = [0, 1, 0, -1, 0, 1, -1, -1, 1];
pub const CY: [i32; 9] = [0, 0, 1, 0, -1, 1, 1, -1, -1];
pub const WEIGHTS: [f64; 9] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
pub const OPPOSITE: [usize; 9] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// Upper bound on |u| for which the second-order equilibrium is trusted.
pub const MAX_LATTICE_SPEED: f64 = 0.3;

/// BGK equilibrium `w_i ρ (1 + 3 c·u + 4.5 (c·u)² − 1.5 |u|²)`.
pub fn equilibrium(rho: f64, u: [f64; 2]) -> Result<[f64; 9]> {
    let speed = u[0].hypot(u[1]);
    if !(speed < MAX_LATTICE_SPEED) {
        return Err(LbmError::LowMach { speed });
    }
    Ok(equilibrium_unchecked(rho, u))
}

#[inline]
pub(crate) fn equilibrium_unchecked(rho: f64, u: [f64; 2]) -> [f64; 9] {
    let usq = 1.5 * (u[0] * u[0] + u[1] * u[1]);
    let mut feq = [0.0; 9];
    for i in 0..9 {
        let cu = CX[i] as f64 * u[0] + CY[i] as f64 * u[1];
        feq[i] = WEIGHTS[i] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - usq);
    }
    feq
}

/// Treatment of the left/right edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum XBoundary {
    Periodic,
    /// Prescribed velocity `(u_in, 0)` at the left edge, zero-gradient outflow at the right.
    InflowOutflow { u_in: f64 },
}

/// Distribution functions plus solid mask on an `H×W` lattice, periodic in y.
#[derive(Clone, Debug)]
pub struct LatticeState {
    height: usize,
    width: usize,
    /// `[9][H][W]`
    f: Vec<f64>,
    scratch: Vec<f64>,
    solid: Vec<bool>,
    pull: Vec<u32>,
    tau: f64,
    x_boundary: XBoundary,
    body_force: [f64; 2],
    steps: u64,
}

impl LatticeState {
    /// Uniform equilibrium at density `rho` and velocity `u`, no solids.
    pub fn uniform(
        height: usize,
        width: usize,
        tau: f64,
        rho: f64,
        u: [f64; 2],
        x_boundary: XBoundary,
    ) -> Result<Self> {
        if height < 3 || width < 3 {
            return Err(LbmError::Config(format!(
                "lattice {height}×{width} too small (min 3×3)"
            )));
        }
        if !(tau > 0.5) {
            return Err(LbmError::Config(format!(
                "relaxation time {tau} must exceed 0.5"
            )));
        }
        let feq = equilibrium(rho, u)?;
        let n = height * width;
        let mut f = vec![0.0; 9 * n];
        for (i, v) in feq.iter().enumerate() {
            f[i * n..(i + 1) * n].fill(*v);
        }
        Ok(Self {
            height,
            width,
            scratch: f.clone(),
            f,
            pull: Self::build_pull_table(height, width, &vec![false; n]),
            solid: vec![false; n],
            tau,
            x_boundary,
            body_force: [0.0, 0.0],
            steps: 0,
        })
    }

    pub fn with_solid(mut self, solid: Vec<bool>) -> Result<Self> {
        if solid.len() != self.height * self.width {
            return Err(LbmError::Config(format!(
                "solid mask has {} cells, lattice has {}",
                solid.len(),
                self.height * self.width
            )));
        }
        self.pull = Self::build_pull_table(self.height, self.width, &solid);
        self.solid = solid;
        Ok(self)
    }

    pub fn with_body_force(mut self, force: [f64; 2]) -> Self {
        self.body_force = force;
        self
    }

    /// Overwrites the distributions at `(y, x)` with the equilibrium for `(rho, u)`.
    pub fn set_equilibrium(&mut self, y: usize, x: usize, rho: f64, u: [f64; 2]) -> Result<()> {
        let feq = equilibrium(rho, u)?;
        let n = self.height * self.width;
        let c = y * self.width + x;
        for (i, v) in feq.iter().enumerate() {
            self.f[i * n + c] = *v;
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn is_solid(&self, y: usize, x: usize) -> bool {
        self.solid[y * self.width + x]
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid
    }

    /// Distribution values as a `[9, H, W]` tensor.
    pub fn distributions(&self) -> Tensor {
        Tensor::new(&[9, self.height, self.width], self.f.clone()).expect("lattice dims")
    }

    /// Total mass over fluid cells.
    pub fn total_mass(&self) -> f64 {
        let n = self.height * self.width;
        let mut m = 0.0;
        for c in (0..n).filter(|&c| !self.solid[c]) {
            for i in 0..9 {
                m += self.f[i * n + c];
            }
        }
        m
    }

    #[inline]
    fn moments(&self, c: usize) -> (f64, [f64; 2]) {
        let n = self.height * self.width;
        let mut rho = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for i in 0..9 {
            let v = self.f[i * n + c];
            rho += v;
            mx += CX[i] as f64 * v;
            my += CY[i] as f64 * v;
        }
        (rho, [mx, my])
    }

    /// Density and velocity at a cell; velocity includes the half-force shift.
    pub fn macroscopic(&self, y: usize, x: usize) -> (f64, [f64; 2]) {
        let c = y * self.width + x;
        if self.solid[c] {
            return (1.0, [0.0, 0.0]);
        }
        let (rho, m) = self.moments(c);
        (
            rho,
            [
                (m[0] + 0.5 * self.body_force[0]) / rho,
                (m[1] + 0.5 * self.body_force[1]) / rho,
            ],
        )
    }

    /// `|u|` on the lattice as an `H×W` tensor (zero inside solids).
    pub fn velocity_magnitude(&self) -> Tensor {
        let mut out = vec![0.0; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                let (_, u) = self.macroscopic(y, x);
                out[y * self.width + x] = u[0].hypot(u[1]);
            }
        }
        Tensor::new(&[self.height, self.width], out).expect("lattice dims")
    }

    /// One collide + stream + boundary update.
    pub fn step(&mut self) -> Result<()> {
        self.collide()?;
        self.stream();
        if let XBoundary::InflowOutflow { u_in } = self.x_boundary {
            self.apply_outflow();
            self.apply_inflow(u_in);
        }
        self.steps += 1;
        Ok(())
    }

    /// BGK relaxation with Guo forcing, written into `scratch`.
    fn collide(&mut self) -> Result<()> {
        let n = self.height * self.width;
        let omega = 1.0 / self.tau;
        let force = self.body_force;
        let has_force = force != [0.0, 0.0];
        let source_scale = 1.0 - 0.5 * omega;
        let mut max_speed: f64 = 0.0;
        let mut bad = false;
        for c in 0..n {
            if self.solid[c] {
                for i in 0..9 {
                    self.scratch[i * n + c] = self.f[i * n + c];
                }
                continue;
            }
            let (rho, m) = self.moments(c);
            let u = [(m[0] + 0.5 * force[0]) / rho, (m[1] + 0.5 * force[1]) / rho];
            let speed = (u[0] * u[0] + u[1] * u[1]).sqrt();
            max_speed = max_speed.max(speed);
            if !(rho > 0.0) || !speed.is_finite() {
                bad = true;
            }
            let feq = equilibrium_unchecked(rho, u);
            let mut neq = [0.0; 9];
            for i in 0..9 {
                neq[i] = self.f[i * n + c] - feq[i];
            }
            for i in 0..9 {
                let mut post = feq[i] + (1.0 - omega) * neq[i];
                if has_force {
                    let (cx, cy) = (CX[i] as f64, CY[i] as f64);
                    let cu = cx * u[0] + cy * u[1];
                    let term = 3.0 * ((cx - u[0]) * force[0] + (cy - u[1]) * force[1])
                        + 9.0 * cu * (cx * force[0] + cy * force[1]);
                    post += source_scale * WEIGHTS[i] * term;
                }
                self.scratch[i * n + c] = post;
            }
        }
        if bad || !max_speed.is_finite() {
            return Err(LbmError::Unstable {
                step: self.steps + 1,
                max_speed,
            });
        }
        Ok(())
    }

    /// Pull streaming from `scratch` into `f`; periodic wrap in both axes,
    /// half-way bounce-back where the upstream cell is solid.
    fn stream(&mut self) {
        for (dst, &src) in self.f.iter_mut().zip(&self.pull) {
            *dst = self.scratch[src as usize];
        }
    }

    /// Source index into the post-collision buffer for every `(i, cell)`.
    fn build_pull_table(height: usize, width: usize, solid: &[bool]) -> Vec<u32> {
        let n = height * width;
        let mut pull = vec![0u32; 9 * n];
        for i in 0..9 {
            for y in 0..height {
                let sy = (y as i64 - CY[i] as i64).rem_euclid(height as i64) as usize;
                for x in 0..width {
                    let c = y * width + x;
                    let sx = (x as i64 - CX[i] as i64).rem_euclid(width as i64) as usize;
                    let src = sy * width + sx;
                    pull[i * n + c] = if solid[c] {
                        // solids keep their (copied) populations
                        i * n + c
                    } else if solid[src] {
                        OPPOSITE[i] * n + c
                    } else {
                        i * n + src
                    } as u32;
                }
            }
        }
        pull
    }

    /// Right edge: unknown (leftward) populations copied from the neighbouring column.
    fn apply_outflow(&mut self) {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        for y in 0..h {
            let c = y * w + w - 1;
            if self.solid[c] {
                continue;
            }
            for i in [3, 6, 7] {
                self.f[i * n + c] = self.f[i * n + c - 1];
            }
        }
    }

    /// Left edge: Zou–He velocity inlet with `u = (u_in, 0)`.
    fn apply_inflow(&mut self, u_in: f64) {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        for y in 0..h {
            let c = y * w;
            if self.solid[c] {
                continue;
            }
            let f = |i: usize| self.f[i * n + c];
            let rho = (f(0) + f(2) + f(4) + 2.0 * (f(3) + f(6) + f(7))) / (1.0 - u_in);
            let feq = equilibrium_unchecked(rho, [u_in, 0.0]);
            for i in [1, 5, 8] {
                let o = OPPOSITE[i];
                self.f[i * n + c] = feq[i] + self.f[o * n + c] - feq[o];
            }
        }
    }
}
