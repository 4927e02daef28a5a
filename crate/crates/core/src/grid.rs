use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform partition of `[0, T]` into `n` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N", "cell count must be positive"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { n, horizon })
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// Node `t_i = i T / N`; the last node is exactly `T`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }

    /// Midpoint of cell `j` (1-based, covering `(t_{j-1}, t_j]`).
    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.node(j - 1) + self.node(j))
    }
}
