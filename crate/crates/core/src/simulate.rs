//! Joint sampling of `(B, B̂, W)` and left-point Euler simulation of the
//! scaled log-price and its frozen-volatility approximations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::kernels::{CellWeights, KernelSpec};
use crate::mc::McEstimate;
use crate::model::ModelSpec;
use crate::rng::{fill_normals, replication_rng, CHUNK};
use crate::stats::{wilson_interval, Z_95};

/// Discrete Volterra operator: `B̂(t_i) = Σ_{j<=i} L[i][j] ξ_j` with
/// `L[i][j] = w_ij / sqrt(Δ)` and `ξ` the unit normals behind `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraMatrix {
    weights: CellWeights,
}

impl VolterraMatrix {
    pub fn from_weights(weights: CellWeights) -> Self {
        Self { weights }
    }

    pub fn grid(&self) -> &Grid {
        self.weights.grid()
    }

    pub fn weights(&self) -> &CellWeights {
        &self.weights
    }

    /// `L[i][j]`, `1 <= j <= i <= N`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.weights.row(i)[j - 1] / self.grid().step().sqrt()
    }

    /// Diagonal of `L Lᵀ`, the discrete `k(t_i, t_i)`.
    pub fn variance(&self, i: usize) -> f64 {
        let dt = self.grid().step();
        self.weights.row(i).iter().map(|w| w * w).sum::<f64>() / dt
    }

    /// Nodal `B̂` driven by the unit normals `xi`.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let scale = 1.0 / self.grid().step().sqrt();
        let mut out = self.weights.lift(xi);
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

pub fn build_volterra_matrix(kernel: &KernelSpec, grid: &Grid) -> Result<VolterraMatrix> {
    Ok(VolterraMatrix {
        weights: CellWeights::build(kernel, grid)?,
    })
}

/// One replication of the driving noise on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub grid: Grid,
    /// `(master seed, replication index)` when drawn from a stream.
    pub seed: Option<(u64, u64)>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub b: Vec<f64>,
    pub bhat: Vec<f64>,
    pub w: Vec<f64>,
}

fn brownian_nodes(z: &[f64], dt: f64) -> Vec<f64> {
    let sq = dt.sqrt();
    let mut out = Vec::with_capacity(z.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for x in z {
        acc += sq * x;
        out.push(acc);
    }
    out
}

impl PathBundle {
    /// Builds the nodal paths from given unit normals.
    pub fn from_noise(matrix: &VolterraMatrix, xi: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let grid = *matrix.grid();
        let n = grid.cells();
        if xi.len() != n || eta.len() != n {
            return Err(Error::GridMismatch(format!(
                "noise vectors of length {}/{} on a {n}-cell grid",
                xi.len(),
                eta.len()
            )));
        }
        let dt = grid.step();
        Ok(Self {
            grid,
            seed: None,
            b: brownian_nodes(&xi, dt),
            bhat: matrix.apply(&xi),
            w: brownian_nodes(&eta, dt),
            xi,
            eta,
        })
    }

    /// Replication `index` of stream `seed`.
    pub fn generate(matrix: &VolterraMatrix, seed: u64, index: u64) -> Self {
        let n = matrix.grid().cells();
        let mut rng = replication_rng(seed, index);
        let mut xi = vec![0.0; n];
        let mut eta = vec![0.0; n];
        fill_normals(&mut rng, &mut xi);
        fill_normals(&mut rng, &mut eta);
        let mut out = Self::from_noise(matrix, xi, eta).expect("lengths match the grid");
        out.seed = Some((seed, index));
        out
    }
}

/// Replications `0..count` of stream `seed`, in index order.
pub fn generate_bundles(matrix: &VolterraMatrix, seed: u64, count: usize) -> Vec<PathBundle> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| PathBundle::generate(matrix, seed, k))
        .collect()
}

/// Nodal `Z`, `X` (drift plus `W` part) and `V` (the `ρ B` part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub epsilon: f64,
}

impl SimResult {
    /// CSV `t,B,Bhat,W,Z,X,V`, one row per node.
    pub fn to_csv(&self, bundle: &PathBundle) -> String {
        let mut out = String::from("t,B,Bhat,W,Z,X,V\n");
        for i in 0..self.z.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                bundle.grid.node(i),
                bundle.b[i],
                bundle.bhat[i],
                bundle.w[i],
                self.z[i],
                self.x[i],
                self.v[i]
            ));
        }
        out
    }
}

/// Left-point Euler recursion on already scaled inputs.
///
/// `db`, `dw` are increments of the scaled noises, `phi` the scaled nodal
/// `B̂` (`None` means `φ ≡ 0`, valid when `μ`, `σ` are constant), `ito` the
/// factor of the `-½σ²` drift and `block` the number of cells over which the
/// volatility of the `ρ` term stays frozen (1 for the plain scheme).
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_core(
    model: &ModelSpec,
    dt: f64,
    ito: f64,
    db: &[f64],
    dw: &[f64],
    phi: Option<&[f64]>,
    block: usize,
    z: &mut [f64],
    x: &mut [f64],
    v: &mut [f64],
) {
    let rho = model.rho();
    let rho_bar = model.rho_bar();
    let (mu, sigma) = (model.mu(), model.sigma());
    let at = |i: usize| phi.map_or(0.0, |p| p[i]);
    z[0] = model.x0();
    x[0] = model.x0();
    v[0] = 0.0;
    let mut s_frozen = 0.0;
    for i in 0..db.len() {
        let p = at(i);
        let s = sigma.eval(p);
        if i % block == 0 {
            s_frozen = s;
        }
        x[i + 1] = x[i] + (mu.eval(p) - 0.5 * ito * s * s) * dt + rho_bar * s * dw[i];
        v[i + 1] = v[i] + rho * s_frozen * db[i];
        z[i + 1] = x[i + 1] + v[i + 1];
    }
}

fn check_bundle(model: &ModelSpec, bundle: &PathBundle) -> Result<()> {
    let t = bundle.grid.horizon();
    if (t - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(Error::GridMismatch(format!(
            "bundle horizon {t} differs from model horizon {}",
            model.horizon()
        )));
    }
    Ok(())
}

fn run_paths(
    model: &ModelSpec,
    grid: &Grid,
    b: &[f64],
    bhat: &[f64],
    w: &[f64],
    ito: f64,
    block: usize,
    epsilon: f64,
) -> SimResult {
    let n = grid.cells();
    let db: Vec<f64> = b.windows(2).map(|p| p[1] - p[0]).collect();
    let dw: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
    let mut z = vec![0.0; n + 1];
    let mut x = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    euler_core(model, grid.step(), ito, &db, &dw, Some(bhat), block, &mut z, &mut x, &mut v);
    SimResult { z, x, v, epsilon }
}

fn scaled(p: &[f64], eps: f64) -> Vec<f64> {
    p.iter().map(|v| eps * v).collect()
}

/// Euler scheme driven by prescaled nodal paths (`εB`, `εB̂`, `εW`) with
/// Itô correction factor `ito` (`ε²` for the scaled model).
pub fn simulate_from_paths(
    model: &ModelSpec,
    grid: &Grid,
    b: &[f64],
    bhat: &[f64],
    w: &[f64],
    ito: f64,
) -> Result<SimResult> {
    let n = grid.cells() + 1;
    if b.len() != n || bhat.len() != n || w.len() != n {
        return Err(Error::GridMismatch("nodal paths must have N+1 values".into()));
    }
    Ok(run_paths(model, grid, b, bhat, w, ito, 1, ito.sqrt()))
}

/// `Z^n` for one bundle at noise level `epsilon`.
pub fn simulate_log_price(model: &ModelSpec, bundle: &PathBundle, epsilon: f64) -> Result<SimResult> {
    check_bundle(model, bundle)?;
    Ok(run_paths(
        model,
        &bundle.grid,
        &scaled(&bundle.b, epsilon),
        &scaled(&bundle.bhat, epsilon),
        &scaled(&bundle.w, epsilon),
        epsilon * epsilon,
        1,
        epsilon,
    ))
}

fn block_len(grid: &Grid, m: usize) -> Result<usize> {
    let n = grid.cells();
    if m == 0 || n % m != 0 {
        return Err(invalid("m", format!("{m} must divide the number of cells {n}")));
    }
    Ok(n / m)
}

/// `Z^{n,m}`: the `ρ` term uses `σ` frozen at the breakpoints `kT/m`.
pub fn simulate_approx_log_price(
    model: &ModelSpec,
    bundle: &PathBundle,
    epsilon: f64,
    m: usize,
) -> Result<SimResult> {
    check_bundle(model, bundle)?;
    let block = block_len(&bundle.grid, m)?;
    Ok(run_paths(
        model,
        &bundle.grid,
        &scaled(&bundle.b, epsilon),
        &scaled(&bundle.bhat, epsilon),
        &scaled(&bundle.w, epsilon),
        epsilon * epsilon,
        block,
        epsilon,
    ))
}

/// Estimates `P(sup_t |Z^n - Z^{n,m}| > δ)` with both processes driven by
/// the same noise.
pub fn approx_gap_tail(
    model: &ModelSpec,
    grid: &Grid,
    epsilon: f64,
    m: usize,
    delta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    if n_paths < 1000 {
        return Err(invalid("n_paths", format!("need at least 1000 paths, got {n_paths}")));
    }
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(Error::GridMismatch("grid horizon differs from model horizon".into()));
    }
    let block = block_len(grid, m)?;
    let matrix = build_volterra_matrix(model.kernel(), grid)?;
    let n = grid.cells();
    let dt = grid.step();
    let sq = epsilon * dt.sqrt();
    let phi_scale = epsilon / dt.sqrt();
    let chunks = n_paths.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut xi = vec![0.0; n];
            let mut eta = vec![0.0; n];
            let mut phi = vec![0.0; n + 1];
            let mut bufs = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
            let mut approx = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
            let mut hits = 0u64;
            for k in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let mut rng = replication_rng(seed, k as u64);
                fill_normals(&mut rng, &mut xi);
                fill_normals(&mut rng, &mut eta);
                matrix.weights().lift_into(&xi, &mut phi);
                phi.iter_mut().for_each(|p| *p *= phi_scale);
                let db: Vec<f64> = xi.iter().map(|v| v * sq).collect();
                let dw: Vec<f64> = eta.iter().map(|v| v * sq).collect();
                let ito = epsilon * epsilon;
                let [z, x, v] = &mut bufs;
                euler_core(model, dt, ito, &db, &dw, Some(&phi), 1, z, x, v);
                let [za, xa, va] = &mut approx;
                euler_core(model, dt, ito, &db, &dw, Some(&phi), block, za, xa, va);
                let gap = z.iter().zip(za.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if gap > delta {
                    hits += 1;
                }
            }
            hits
        })
        .collect::<Vec<u64>>()
        .into_iter()
        .sum();
    let p_hat = hits as f64 / n_paths as f64;
    let (ci_lo, ci_hi) = wilson_interval(p_hat, n_paths as f64, Z_95);
    Ok(McEstimate {
        p_hat,
        ci_lo,
        ci_hi,
        n_paths: n_paths as u64,
        n_hits: hits,
        ess: n_paths as f64,
        epsilon,
    })
}
