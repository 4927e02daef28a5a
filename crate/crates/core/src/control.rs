use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Cameron–Martin element represented by its piecewise-constant derivative:
/// `fdot[j-1]` is the slope on the cell `(t_{j-1}, t_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFunction {
    grid: Grid,
    fdot: Vec<f64>,
}

impl ControlFunction {
    pub fn new(grid: Grid, fdot: Vec<f64>) -> Result<Self> {
        if fdot.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "control has {} cell values, grid has {} cells",
                fdot.len(),
                grid.cells()
            )));
        }
        if fdot.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("control derivative must be finite".into()));
        }
        Ok(Self { grid, fdot })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            fdot: vec![0.0; grid.cells()],
        }
    }

    pub fn constant(grid: Grid, slope: f64) -> Self {
        Self {
            grid,
            fdot: vec![slope; grid.cells()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn fdot(&self) -> &[f64] {
        &self.fdot
    }

    pub fn into_fdot(self) -> Vec<f64> {
        self.fdot
    }

    /// `½ ∫ ḟ² dt`, exact for piecewise-constant derivatives.
    pub fn energy(&self) -> f64 {
        0.5 * self.grid.step() * self.fdot.iter().map(|v| v * v).sum::<f64>()
    }

    /// Nodal values `f(t_i)`, starting from `f(0) = 0`.
    pub fn path(&self) -> Vec<f64> {
        let dt = self.grid.step();
        let mut out = Vec::with_capacity(self.fdot.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for v in &self.fdot {
            acc += v * dt;
            out.push(acc);
        }
        out
    }
}
