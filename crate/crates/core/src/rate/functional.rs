//! Discretized rate functionals and their gradients with respect to the
//! control derivative `ḟ`.
//!
//! Cell `k` (0-based, `(t_k, t_{k+1}]`) evaluates `μ`, `σ` at the left node
//! `φ_k = f̂(t_k)`, consistently with the Euler simulator.

use serde::{Deserialize, Serialize};

use crate::control::ControlFunction;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernels::CellWeights;
use crate::model::ModelSpec;

/// Candidate log-price increment path `x`, nodal with `x(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathHypothesis {
    grid: Grid,
    x: Vec<f64>,
}

impl PathHypothesis {
    pub fn new(grid: Grid, x: Vec<f64>) -> Result<Self> {
        if x.len() != grid.cells() + 1 {
            return Err(Error::GridMismatch(format!(
                "path has {} nodes, grid has {}",
                x.len(),
                grid.cells() + 1
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("path values must be finite".into()));
        }
        if x[0] != 0.0 {
            return Err(Error::Domain(format!("path must start at 0, got {}", x[0])));
        }
        Ok(Self { grid, x })
    }

    /// Samples `x(t)` at the grid nodes; `x(0)` is forced to zero.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let mut x: Vec<f64> = grid.nodes().into_iter().map(f).collect();
        x[0] = 0.0;
        Self { grid, x }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    /// Forward differences `ẋ_k = (x_{k+1} - x_k) / Δ`.
    pub fn derivative(&self) -> Vec<f64> {
        let dt = self.grid.step();
        self.x.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
    }
}

/// What the rate minimization targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `𝓘_Z(x)` for a path hypothesis.
    Pathwise(PathHypothesis),
    /// `I_{Z_T}(y)` for the terminal increment `Z_T - x0 = y`.
    Terminal { y: f64 },
    /// `I_U` for the barrier `U > e^{x0}`.
    Crossing { barrier: f64 },
}

#[derive(Debug, Clone)]
enum Kind {
    Pathwise(Vec<f64>),
    Terminal(f64),
    Crossing(f64),
}

/// Result of one functional evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Eval {
    pub value: f64,
    /// Number of cells entering the terminal-type fraction (the crossing
    /// node index `i*`); `N` otherwise.
    pub stop: usize,
    /// `R / S` at the evaluated control (terminal and crossing only).
    pub lambda: f64,
}

/// A rate functional bound to a model and cell weights.
#[derive(Debug, Clone)]
pub(crate) struct Problem<'a> {
    model: &'a ModelSpec,
    weights: &'a CellWeights,
    kind: Kind,
    frozen: bool,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a ModelSpec, weights: &'a CellWeights, objective: &Objective) -> Result<Self> {
        let grid = weights.grid();
        if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                model.horizon()
            )));
        }
        let kind = match objective {
            Objective::Pathwise(x) => {
                if x.grid() != grid {
                    return Err(Error::GridMismatch("path hypothesis grid differs".into()));
                }
                Kind::Pathwise(x.derivative())
            }
            Objective::Terminal { y } => {
                if !y.is_finite() {
                    return Err(invalid("y", "must be finite"));
                }
                Kind::Terminal(*y)
            }
            Objective::Crossing { barrier } => {
                let s0 = model.s0();
                if !(barrier.is_finite() && *barrier > s0) {
                    return Err(Error::Domain(format!(
                        "barrier U = {barrier} must exceed the initial price {s0}"
                    )));
                }
                Kind::Crossing((barrier / s0).ln())
            }
        };
        Ok(Self {
            model,
            weights,
            kind,
            frozen: model.mu().is_constant() && model.sigma().is_constant(),
        })
    }

    pub fn grid(&self) -> &Grid {
        self.weights.grid()
    }

    pub fn value(&self, fdot: &[f64]) -> f64 {
        self.eval(fdot, None).value
    }

    /// Evaluates the functional and, when `grad` is given, writes its
    /// gradient with respect to `fdot`.
    pub fn eval(&self, fdot: &[f64], grad: Option<&mut [f64]>) -> Eval {
        let n = fdot.len();
        let dt = self.grid().step();
        let phi = if self.frozen {
            vec![0.0; n + 1]
        } else {
            self.weights.lift(fdot)
        };
        let (mu_f, sigma_f) = (self.model.mu(), self.model.sigma());
        let rho = self.model.rho();
        let rho_bar = self.model.rho_bar();
        let energy = 0.5 * dt * fdot.iter().map(|f| f * f).sum::<f64>();

        let want_grad = grad.is_some();
        let mut g_f = vec![0.0; if want_grad { n } else { 0 }];
        let mut g_phi = vec![0.0; if want_grad && !self.frozen { n + 1 } else { 0 }];

        let eval = match &self.kind {
            Kind::Pathwise(xd) => {
                let mut acc = 0.0;
                for k in 0..n {
                    let (mu, dmu) = mu_f.eval_with_derivative(phi[k]);
                    let (s, ds) = sigma_f.eval_with_derivative(phi[k]);
                    let f = fdot[k];
                    let r = (xd[k] - mu - rho * s * f) / (rho_bar * s);
                    acc += r * r;
                    if want_grad {
                        g_f[k] = f * dt - r * rho / rho_bar * dt;
                        if !self.frozen {
                            let dr = (-dmu - rho * ds * f) / (rho_bar * s) - r * ds / s;
                            g_phi[k] = r * dt * dr;
                        }
                    }
                }
                Eval {
                    value: energy + 0.5 * dt * acc,
                    stop: n,
                    lambda: 0.0,
                }
            }
            Kind::Terminal(_) | Kind::Crossing(_) => {
                let (target, scan) = match self.kind {
                    Kind::Terminal(y) => (y, false),
                    Kind::Crossing(a) => (a, true),
                    Kind::Pathwise(_) => unreachable!(),
                };
                let rb2 = rho_bar * rho_bar;
                let mut a_sum = 0.0;
                let mut s_sum = 0.0;
                let mut best = (f64::INFINITY, n, 0.0, 1.0);
                for k in 0..n {
                    let s = sigma_f.eval(phi[k]);
                    a_sum += (mu_f.eval(phi[k]) + rho * s * fdot[k]) * dt;
                    s_sum += rb2 * s * s * dt;
                    if scan || k + 1 == n {
                        let r = target - a_sum;
                        let c = 0.5 * r * r / s_sum;
                        if c < best.0 {
                            best = (c, k + 1, r, s_sum);
                        }
                    }
                }
                let (c, stop, r, s_tot) = best;
                let lambda = r / s_tot;
                if want_grad {
                    for k in 0..n {
                        let f = fdot[k];
                        if k >= stop {
                            g_f[k] = f * dt;
                            continue;
                        }
                        let (s, ds) = sigma_f.eval_with_derivative(phi[k]);
                        g_f[k] = f * dt - lambda * rho * s * dt;
                        if !self.frozen {
                            let dmu = mu_f.derivative(phi[k]);
                            g_phi[k] = -lambda * (dmu + rho * ds * f) * dt
                                - lambda * lambda * rb2 * s * ds * dt;
                        }
                    }
                }
                Eval {
                    value: energy + c,
                    stop,
                    lambda,
                }
            }
        };

        if let Some(out) = grad {
            if self.frozen {
                out.copy_from_slice(&g_f);
            } else {
                let back = self.weights.lift_adjoint(&g_phi);
                for ((o, a), b) in out.iter_mut().zip(&g_f).zip(&back) {
                    *o = a + b;
                }
            }
        }
        eval
    }

    /// Optimal `W`-direction control `ẏ` accompanying `fdot`: the residual
    /// `(ẋ - μ - ρσḟ)/(ρ̄σ)` of the minimizing path.
    pub fn w_control(&self, fdot: &[f64]) -> Vec<f64> {
        let n = fdot.len();
        let phi = if self.frozen {
            vec![0.0; n + 1]
        } else {
            self.weights.lift(fdot)
        };
        let rho = self.model.rho();
        let rho_bar = self.model.rho_bar();
        match &self.kind {
            Kind::Pathwise(xd) => (0..n)
                .map(|k| {
                    let s = self.model.sigma().eval(phi[k]);
                    (xd[k] - self.model.mu().eval(phi[k]) - rho * s * fdot[k]) / (rho_bar * s)
                })
                .collect(),
            _ => {
                let e = self.eval(fdot, None);
                (0..n)
                    .map(|k| {
                        if k < e.stop {
                            e.lambda * rho_bar * self.model.sigma().eval(phi[k])
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        }
    }
}

/// `Ψ(f, f̂)(t_i) = Σ_{k<i} σ(f̂(t_k)) ḟ_k Δ` at every node.
pub fn psi(model: &ModelSpec, control: &ControlFunction, weights: &CellWeights) -> Result<Vec<f64>> {
    if control.grid() != weights.grid() {
        return Err(Error::GridMismatch("control and weights grids differ".into()));
    }
    let phi = weights.lift(control.fdot());
    let dt = control.grid().step();
    let mut out = Vec::with_capacity(phi.len());
    let mut acc = 0.0;
    out.push(0.0);
    for (k, f) in control.fdot().iter().enumerate() {
        acc += model.sigma().eval(phi[k]) * f * dt;
        out.push(acc);
    }
    Ok(out)
}

/// `Ψ_m(f, g)` at every grid node: `σ` frozen at `g(kT/m)` over
/// `[kT/m, (k+1)T/m)`, applied to the increments of `f`. Requires `m | N`.
pub fn psi_m(
    model: &ModelSpec,
    m: usize,
    f_path: &[f64],
    g_path: &[f64],
    grid: &Grid,
) -> Result<Vec<f64>> {
    let n = grid.cells();
    if m == 0 || n % m != 0 {
        return Err(invalid("m", format!("breakpoints kT/{m} are not grid nodes of a {n}-cell grid")));
    }
    if f_path.len() != n + 1 || g_path.len() != n + 1 {
        return Err(Error::GridMismatch("paths must have N+1 nodal values".into()));
    }
    let block = n / m;
    let mut out = vec![0.0; n + 1];
    let mut completed = 0.0;
    for i in 1..=n {
        let start = ((i - 1) / block) * block;
        let s = model.sigma().eval(g_path[start]);
        out[i] = completed + s * (f_path[i] - f_path[start]);
        if i % block == 0 {
            completed = out[i];
        }
    }
    Ok(out)
}

/// `J(x | φ) = ½ ∫ ((ẋ - μ(φ)) / (ρ̄ σ(φ)))² dt`, left-point rule on cells.
pub fn conditional_rate(model: &ModelSpec, x: &PathHypothesis, phi: &[f64]) -> Result<f64> {
    let n = x.grid().cells();
    if phi.len() < n {
        return Err(Error::GridMismatch("φ must have a value at every left node".into()));
    }
    let dt = x.grid().step();
    let rb = model.rho_bar();
    let xd = x.derivative();
    let acc: f64 = (0..n)
        .map(|k| {
            let r = (xd[k] - model.mu().eval(phi[k])) / (rb * model.sigma().eval(phi[k]));
            r * r
        })
        .sum();
    Ok(0.5 * dt * acc)
}

/// `𝓗((f, f̂), x) = ½‖f‖² + ½ ∫ ((ẋ - μ(f̂) - ρΨ̇)/(ρ̄σ(f̂)))² dt`.
pub fn energy(
    model: &ModelSpec,
    control: &ControlFunction,
    x: &PathHypothesis,
    weights: &CellWeights,
) -> Result<f64> {
    if control.grid() != x.grid() {
        return Err(Error::GridMismatch("control and path grids differ".into()));
    }
    let problem = Problem::new(model, weights, &Objective::Pathwise(x.clone()))?;
    Ok(problem.value(control.fdot()))
}

/// Value of any objective at a fixed control (no minimization).
pub fn objective_value(
    model: &ModelSpec,
    objective: &Objective,
    control: &ControlFunction,
    weights: &CellWeights,
) -> Result<f64> {
    if control.grid() != weights.grid() {
        return Err(Error::GridMismatch("control and weights grids differ".into()));
    }
    Ok(Problem::new(model, weights, objective)?.value(control.fdot()))
}

/// Analytic gradient of an objective with respect to `ḟ`.
pub fn objective_gradient(
    model: &ModelSpec,
    objective: &Objective,
    control: &ControlFunction,
    weights: &CellWeights,
) -> Result<Vec<f64>> {
    if control.grid() != weights.grid() {
        return Err(Error::GridMismatch("control and weights grids differ".into()));
    }
    let problem = Problem::new(model, weights, objective)?;
    let mut g = vec![0.0; control.fdot().len()];
    problem.eval(control.fdot(), Some(&mut g));
    Ok(g)
}
