//! Rate functionals as discretized variational problems: evaluation,
//! multistart quasi-Newton minimization and a brute-force oracle.

mod functional;
mod optimize;

pub use functional::{
    conditional_rate, energy, objective_gradient, objective_value, psi, psi_m, Objective,
    PathHypothesis,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlFunction;
use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::kernels::CellWeights;
use crate::model::ModelSpec;
use crate::rng::{fill_normals, replication_rng};
use functional::Problem;
use optimize::{lbfgs, Settings};

/// Energies of the random multistart controls, in units of the objective
/// value at the zero control.
pub const START_ENERGIES: [f64; 7] = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Zero control plus `multistarts - 1` random starts (at most 8).
    pub multistarts: usize,
    /// Tolerance on the `L²` norm of the functional gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub memory: usize,
    /// Seed of the random starts.
    pub seed: u64,
    /// Compare the analytic gradient with central differences at the result.
    pub fd_check: bool,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            multistarts: 8,
            grad_tol: 1e-6,
            max_iter: 1000,
            memory: 10,
            seed: 0,
            fd_check: true,
        }
    }
}

impl RateConfig {
    fn validate(&self) -> Result<()> {
        if self.multistarts == 0 || self.multistarts > START_ENERGIES.len() + 1 {
            return Err(invalid("multistarts", format!("must lie in 1..=8, got {}", self.multistarts)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be positive"));
        }
        if self.memory == 0 {
            return Err(invalid("memory", "must be positive"));
        }
        Ok(())
    }
}

/// Minimized rate and its minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub value: f64,
    pub argmin: ControlFunction,
    /// Optimal crossing time (`T` for the terminal rate, absent for paths).
    pub t_star: Option<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub start_index: usize,
    pub converged: bool,
    /// Final value of every start, in start order.
    pub start_values: Vec<f64>,
    /// `max |g_fd - g| / max(1, max |g|)` at the minimizer, if checked.
    pub fd_error: Option<f64>,
    /// Optimal `W`-direction control `ẏ` per cell, used for importance
    /// sampling.
    pub w_control: Vec<f64>,
}

impl RateResult {
    /// Compact summary `{"value", "t_star", "converged", "grad_norm", "fdot"}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "t_star": self.t_star,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "fdot": self.argmin.fdot(),
        })
    }
}

/// Model with prebuilt cell weights, reusable across objectives.
#[derive(Debug, Clone)]
pub struct RateSolver {
    model: ModelSpec,
    weights: CellWeights,
}

impl RateSolver {
    pub fn new(model: &ModelSpec, grid: &Grid) -> Result<Self> {
        Ok(Self {
            model: model.clone(),
            weights: CellWeights::build(model.kernel(), grid)?,
        })
    }

    pub fn from_weights(model: &ModelSpec, weights: CellWeights) -> Self {
        Self {
            model: model.clone(),
            weights,
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        self.weights.grid()
    }

    pub fn weights(&self) -> &CellWeights {
        &self.weights
    }

    pub fn value(&self, objective: &Objective, control: &ControlFunction) -> Result<f64> {
        objective_value(&self.model, objective, control, &self.weights)
    }

    pub fn gradient(&self, objective: &Objective, control: &ControlFunction) -> Result<Vec<f64>> {
        objective_gradient(&self.model, objective, control, &self.weights)
    }

    pub fn pathwise(&self, x: &PathHypothesis, cfg: &RateConfig) -> Result<RateResult> {
        self.minimize(&Objective::Pathwise(x.clone()), cfg)
    }

    pub fn terminal(&self, y: f64, cfg: &RateConfig) -> Result<RateResult> {
        self.minimize(&Objective::Terminal { y }, cfg)
    }

    pub fn crossing(&self, barrier: f64, cfg: &RateConfig) -> Result<RateResult> {
        self.minimize(&Objective::Crossing { barrier }, cfg)
    }

    /// Multistart L-BFGS in the scaled variables `z = ḟ sqrt(Δ)`, in which
    /// the energy is `½|z|²` and the Euclidean gradient norm equals the
    /// `L²` norm of the functional gradient.
    pub fn minimize(&self, objective: &Objective, cfg: &RateConfig) -> Result<RateResult> {
        cfg.validate()?;
        let problem = Problem::new(&self.model, &self.weights, objective)?;
        let grid = *self.grid();
        let n = grid.cells();
        let sq = grid.step().sqrt();
        let scaled = |z: &[f64], g: &mut [f64]| {
            let fdot: Vec<f64> = z.iter().map(|v| v / sq).collect();
            let e = problem.eval(&fdot, Some(g));
            g.iter_mut().for_each(|v| *v /= sq);
            e.value
        };
        let scale = problem.value(&vec![0.0; n]).max(1e-3);
        let starts: Vec<Vec<f64>> = (0..cfg.multistarts)
            .map(|k| {
                if k == 0 {
                    return vec![0.0; n];
                }
                let mut z = vec![0.0; n];
                fill_normals(&mut replication_rng(cfg.seed, k as u64), &mut z);
                let e = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
                let target = START_ENERGIES[k - 1] * scale;
                let c = (target / e).sqrt();
                z.iter_mut().for_each(|v| *v *= c);
                z
            })
            .collect();
        let settings = Settings {
            grad_tol: cfg.grad_tol,
            max_iter: cfg.max_iter,
            memory: cfg.memory,
        };
        let outcomes: Vec<_> = starts
            .into_par_iter()
            .map(|z0| lbfgs(scaled, z0, settings))
            .collect();
        let mut best = 0;
        for (k, o) in outcomes.iter().enumerate() {
            if o.value < outcomes[best].value {
                best = k;
            }
        }
        let out = &outcomes[best];
        let fdot: Vec<f64> = out.x.iter().map(|v| v / sq).collect();
        let fd_error = cfg.fd_check.then(|| fd_gradient_error(&scaled, &out.x));
        let eval = problem.eval(&fdot, None);
        let t_star = match objective {
            Objective::Pathwise(_) => None,
            _ => Some(grid.node(eval.stop)),
        };
        let w_control = problem.w_control(&fdot);
        Ok(RateResult {
            value: out.value,
            argmin: ControlFunction::new(grid, fdot)?,
            t_star,
            grad_norm: out.grad_norm,
            iterations: out.iterations,
            start_index: best,
            converged: out.grad_norm <= cfg.grad_tol,
            start_values: outcomes.iter().map(|o| o.value).collect(),
            fd_error,
            w_control,
        })
    }

    /// Exhaustive search over controls that are constant on `cells` equal
    /// blocks of the grid, each block slope taken from `values`.
    pub fn oracle(&self, objective: &Objective, cells: usize, values: &[f64]) -> Result<OracleResult> {
        if !(2..=4).contains(&cells) {
            return Err(invalid("cells", format!("must lie in 2..=4, got {cells}")));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid_values", "need at least one finite value"));
        }
        let problem = Problem::new(&self.model, &self.weights, objective)?;
        let n = self.grid().cells();
        let block: Vec<usize> = (0..n).map(|k| k * cells / n).collect();
        let total = values.len().pow(cells as u32);
        let fdot_of = |mut idx: usize| {
            let mut slopes = [0.0; 4];
            for s in slopes.iter_mut().take(cells) {
                *s = values[idx % values.len()];
                idx /= values.len();
            }
            block.iter().map(|&b| slopes[b]).collect::<Vec<f64>>()
        };
        let (best_idx, value) = (0..total)
            .into_par_iter()
            .map(|idx| (idx, problem.value(&fdot_of(idx))))
            .reduce(
                || (usize::MAX, f64::INFINITY),
                |a, b| {
                    if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            );
        Ok(OracleResult {
            value,
            argmin: ControlFunction::new(*self.grid(), fdot_of(best_idx))?,
        })
    }
}

fn fd_gradient_error<F: Fn(&[f64], &mut [f64]) -> f64>(f: &F, z: &[f64]) -> f64 {
    let n = z.len();
    let mut g = vec![0.0; n];
    f(z, &mut g);
    let h = 1e-5 * z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut scratch = vec![0.0; n];
    let mut zp = z.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        zp[k] = z[k] + h;
        let up = f(&zp, &mut scratch);
        zp[k] = z[k] - h;
        let down = f(&zp, &mut scratch);
        zp[k] = z[k];
        worst = worst.max(((up - down) / (2.0 * h) - g[k]).abs());
    }
    let gmax = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    worst / gmax
}

/// Best tensor-grid control found by [`RateSolver::oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub argmin: ControlFunction,
}

/// `𝓘_Z(x) = inf_f 𝓗((f, f̂), x)`.
pub fn pathwise_rate(model: &ModelSpec, x: &PathHypothesis, cfg: &RateConfig) -> Result<RateResult> {
    RateSolver::new(model, x.grid())?.pathwise(x, cfg)
}

/// `I_{Z_T}(y)` through the reduced terminal functional.
pub fn terminal_rate(model: &ModelSpec, y: f64, grid: &Grid, cfg: &RateConfig) -> Result<RateResult> {
    RateSolver::new(model, grid)?.terminal(y, cfg)
}

/// `I_U` with the crossing time scanned over the grid nodes.
pub fn crossing_rate(model: &ModelSpec, barrier: f64, grid: &Grid, cfg: &RateConfig) -> Result<RateResult> {
    RateSolver::new(model, grid)?.crossing(barrier, cfg)
}

/// Brute-force upper bound on the rate over block-constant controls.
pub fn oracle_rate(
    model: &ModelSpec,
    objective: &Objective,
    grid: &Grid,
    cells: usize,
    grid_values: &[f64],
) -> Result<OracleResult> {
    RateSolver::new(model, grid)?.oracle(objective, cells, grid_values)
}

/// `n` equally spaced values on `[-c, c]`.
pub fn symmetric_values(c: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|k| -c + 2.0 * c * k as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests;
