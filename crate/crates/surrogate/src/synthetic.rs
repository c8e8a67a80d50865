//! Seeded linear test system `x_{t+1} = A·x_t` with orthogonal `A`, used to
//! check Koopman training against exact matrix powers.

use pistm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalSystem {
    a: Vec<Vec<f64>>,
}

impl OrthogonalSystem {
    /// Gram-Schmidt orthonormalization of uniform random rows.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return contract("system dimension must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        while rows.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &rows {
                let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                rows.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        Ok(Self { a: rows })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Aˢ·x`.
    pub fn power(&self, x: &[f64], s: usize) -> Vec<f64> {
        (0..s).fold(x.to_vec(), |v, _| self.step(&v))
    }

    /// `n` consecutive states starting at `x0`, as `[n, dim]`.
    pub fn trajectory(&self, x0: &[f64], n: usize) -> Result<Tensor> {
        if x0.len() != self.dim() {
            return contract(format!("initial state has {} entries, system has {}", x0.len(), self.dim()));
        }
        let mut data = Vec::with_capacity(n * self.dim());
        let mut x = x0.to_vec();
        for _ in 0..n {
            data.extend_from_slice(&x);
            x = self.step(&x);
        }
        Ok(Tensor::new(&[n, self.dim()], data)?)
    }
}

/// Initial state `x0_i = sin(i + 1)`.
pub fn default_initial_state(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i + 1) as f64).sin()).collect()
}
