use rayon::prelude::*;
use statrs::function::gamma::gamma;

use super::spec::{factorial, KernelFamily, KernelSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::quadrature::{integrate_fallible, QuadConfig};

/// Largest grid accepted by the O(N²) weight matrices.
pub const MAX_CELLS: usize = 4096;

const CELL_QUAD: QuadConfig = QuadConfig {
    abs_tol: 1e-13,
    rel_tol: 1e-9,
    max_intervals: 2000,
};

/// `∫_a^b K(t,u) du` for `0 <= a < b <= t`.
///
/// Closed forms for BM, Riemann–Liouville and integrated BM. fBM and fOU
/// cells are integrated adaptively; cells that touch a kernel singularity
/// (the diagonal `b = t`, or `a = 0`) first get a power substitution that
/// absorbs the singular factor. Conditioned kernels use the midpoint rule
/// off the diagonal, where the shifted base kernel is smooth.
pub fn cell_integral(spec: &KernelSpec, t: f64, a: f64, b: f64) -> Result<f64> {
    match spec.family() {
        KernelFamily::BrownianMotion => Ok(b - a),
        KernelFamily::RiemannLiouville { hurst } => {
            let e = hurst + 0.5;
            Ok(((t - a).powf(e) - (t - b).powf(e)) / gamma(hurst + 1.5))
        }
        KernelFamily::IntegratedBm { order } => {
            let e = *order as i32 + 1;
            Ok(((t - a).powi(e) - (t - b).powi(e)) / factorial(order + 1))
        }
        KernelFamily::Conditioned { base, past } => {
            // the shifted cell never touches the base origin
            if b >= t && base.singular_on_diagonal() {
                diagonal_cell(base, past + t, past + a, past + b)
            } else {
                Ok((b - a) * base.eval_unchecked(past + t, past + 0.5 * (a + b))?)
            }
        }
        KernelFamily::FractionalBm(_) | KernelFamily::FractionalOu { .. } => {
            let on_diag = b >= t && spec.singular_on_diagonal();
            let at_origin = a <= 0.0 && spec.singular_at_origin();
            match (on_diag, at_origin) {
                (false, false) => integrate_fallible(|u| spec.eval_unchecked(t, u), a, b, CELL_QUAD),
                (true, false) => diagonal_cell(spec, t, a, b),
                (false, true) => origin_cell(spec, t, b),
                (true, true) => {
                    let mid = 0.5 * (a + b);
                    Ok(origin_cell(spec, t, mid)? + diagonal_cell(spec, t, mid, b)?)
                }
            }
        }
    }
}

/// Exponent of the singular factor `(t-u)^{H-1/2}` on the diagonal.
fn diagonal_exponent(spec: &KernelSpec) -> f64 {
    spec.hurst().map_or(0.0, |h| h - 0.5)
}

/// `u = b - (b-a) w^p`, `p = 1/(1+e)`, flattens `(b-u)^e`.
fn diagonal_cell(spec: &KernelSpec, t: f64, a: f64, b: f64) -> Result<f64> {
    let e = diagonal_exponent(spec);
    let p = 1.0 / (1.0 + e);
    let width = b - a;
    let v = integrate_fallible(
        |w| {
            let u = b - width * w.powf(p);
            if u >= t {
                return Ok(0.0);
            }
            Ok(spec.eval_unchecked(t, u)? * w.powf(p - 1.0))
        },
        0.0,
        1.0,
        CELL_QUAD,
    )?;
    Ok(v * width * p)
}

/// `u = b w^q`, `q = 1/(1-|H-1/2|)`, flattens the `u^{-|H-1/2|}` blow-up at 0.
fn origin_cell(spec: &KernelSpec, t: f64, b: f64) -> Result<f64> {
    let e = -diagonal_exponent(spec).abs();
    let q = 1.0 / (1.0 + e);
    let v = integrate_fallible(
        |w| {
            let u = b * w.powf(q);
            if u <= 0.0 {
                return Ok(0.0);
            }
            Ok(spec.eval_unchecked(t, u)? * w.powf(q - 1.0))
        },
        0.0,
        1.0,
        CELL_QUAD,
    )?;
    Ok(v * b * q)
}

/// Lower-triangular cell weights `w_ij = ∫_{t_{j-1}}^{t_j} K(t_i,u) du`,
/// `1 <= j <= i <= N`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    grid: Grid,
    data: Vec<f64>,
}

fn row_offset(i: usize) -> usize {
    i * (i - 1) / 2
}

impl CellWeights {
    pub fn build(spec: &KernelSpec, grid: &Grid) -> Result<Self> {
        let n = grid.cells();
        if n > MAX_CELLS {
            return Err(Error::GridTooLarge {
                n,
                limit: MAX_CELLS,
            });
        }
        if grid.horizon() > spec.horizon() * (1.0 + 1e-12) {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} exceeds kernel horizon {}",
                grid.horizon(),
                spec.horizon()
            )));
        }
        let rows = (1..=n)
            .into_par_iter()
            .map(|i| {
                let t = grid.node(i);
                (1..=i)
                    .map(|j| cell_integral(spec, t, grid.node(j - 1), grid.node(j)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            data: rows.concat(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Weights of node `i` (`1 <= i <= N`), one per cell `1..=i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = row_offset(i);
        &self.data[start..start + i]
    }

    /// Writes `Σ_j w_ij v_j` for `i = 0..=N` into `out`.
    pub fn lift_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.grid.cells();
        out[0] = 0.0;
        for i in 1..=n {
            out[i] = dot(self.row(i), &v[..i]);
        }
    }

    /// `f̂(t_i) = Σ_j w_ij ḟ_j` at every node, `f̂(0) = 0`.
    pub fn lift(&self, fdot: &[f64]) -> Vec<f64> {
        let n = self.grid.cells();
        debug_assert_eq!(fdot.len(), n);
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        for i in 1..=n {
            out.push(dot(self.row(i), &fdot[..i]));
        }
        out
    }

    /// Adjoint of [`lift`](Self::lift): maps node sensitivities `g[i]`
    /// (`g[0]` ignored) to cell sensitivities `Σ_i w_ij g_i`.
    pub fn lift_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.cells();
        let mut out = vec![0.0; n];
        for (i, gi) in g.iter().enumerate().skip(1) {
            if *gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += w * gi;
            }
        }
        out
    }

    /// `max_i (Σ_j w_ij² / Δ)^{1/2}`: discrete `sup_t (∫_0^t K(t,s)² ds)^{1/2}`.
    pub fn max_row_norm(&self) -> f64 {
        let dt = self.grid.step();
        (1..=self.grid.cells())
            .map(|i| (self.row(i).iter().map(|w| w * w).sum::<f64>() / dt).sqrt())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
