//! Volterra kernel catalog, covariance quadrature, the Cameron–Martin lift
//! `f̂(t) = ∫_0^t K(t,u) ḟ(u) du` and kernel-regularity diagnostics.

mod spec;
mod weights;

pub use spec::{Fbm, KernelFamily, KernelSpec, LOW_CONFIDENCE_HURST};
pub use weights::{cell_integral, CellWeights, MAX_CELLS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlFunction;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::quadrature::{integrate_singular_ends, QuadConfig};
use crate::stats::least_squares;

/// Evaluates `K(t,s)`.
pub fn eval_kernel(spec: &KernelSpec, t: f64, s: f64) -> Result<f64> {
    spec.eval(t, s)
}

/// `k(t,s) = ∫_0^{s∧t} K(t,u) K(s,u) du` by the midpoint rule with `quad_n`
/// cells on `[0, s∧t]`. Midpoints never touch the singular endpoints.
pub fn covariance(spec: &KernelSpec, t: f64, s: f64, quad_n: usize) -> Result<f64> {
    if quad_n < 16 {
        return Err(invalid("quad_N", format!("need at least 16 cells, got {quad_n}")));
    }
    spec.check_domain(t, s)?;
    spec.check_domain(s, t)?;
    let upper = t.min(s);
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let h = upper / quad_n as f64;
    let mut acc = 0.0;
    for k in 0..quad_n {
        let u = (k as f64 + 0.5) * h;
        acc += spec.eval_unchecked(t, u)? * spec.eval_unchecked(s, u)?;
    }
    Ok(acc * h)
}

/// Nodal values of the lifted control `f̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPath {
    pub values: Vec<f64>,
}

/// Lifts a control through the kernel. Builds the cell weights on every call;
/// reuse a [`CellWeights`] when lifting many controls on one grid.
pub fn lift(spec: &KernelSpec, control: &ControlFunction, grid: &Grid) -> Result<LiftedPath> {
    if control.grid() != grid {
        return Err(Error::GridMismatch(
            "control is defined on a different grid".into(),
        ));
    }
    let weights = CellWeights::build(spec, grid)?;
    Ok(LiftedPath {
        values: weights.lift(control.fdot()),
    })
}

/// Estimated kernel modulus `M(δ)` and the fitted exponent `α̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusEstimate {
    pub deltas: Vec<f64>,
    pub modulus: Vec<f64>,
    pub alpha_hat: f64,
}

/// Number of probe offsets per δ in [`modulus_estimate`].
pub const MODULUS_PROBES: usize = 8;

fn increment_energy(spec: &KernelSpec, lo: f64, hi: f64) -> Result<f64> {
    let cfg = QuadConfig {
        abs_tol: 1e-15,
        rel_tol: 1e-7,
        max_intervals: 4000,
    };
    // squared kernels carry |u - end|^{-2|H-1/2|} at the singular ends
    let q = spec
        .hurst()
        .map_or(2.0, |h| (1.0 / h.min(1.0 - h)).max(2.0));
    let shared = integrate_singular_ends(
        |s| {
            let d = spec.eval_unchecked(hi, s)? - spec.eval_unchecked(lo, s)?;
            Ok(d * d)
        },
        0.0,
        lo,
        q,
        cfg,
    )?;
    let tail = integrate_singular_ends(
        |s| {
            let k = spec.eval_unchecked(hi, s)?;
            Ok(k * k)
        },
        lo,
        hi,
        q,
        cfg,
    )?;
    Ok(shared + tail)
}

/// Estimates `M(δ) = sup_{|t1-t2| <= δ} ∫_0^T (K(t1,s) - K(t2,s))² ds` over
/// probe pairs `(t, t+δ)` and fits `log M ~ α log δ` on the smallest half of
/// the `δ` values.
pub fn modulus_estimate(spec: &KernelSpec, deltas: &[f64]) -> Result<ModulusEstimate> {
    let horizon = spec.horizon();
    if deltas.len() < 2 {
        return Err(invalid("deltas", "need at least two values"));
    }
    if let Some(bad) = deltas.iter().find(|d| !(**d > 0.0 && **d <= horizon)) {
        return Err(invalid("deltas", format!("{bad} outside (0, T]")));
    }
    let modulus = deltas
        .par_iter()
        .map(|&delta| {
            let span = horizon - delta;
            let mut best: f64 = 0.0;
            for k in 0..=MODULUS_PROBES {
                let lo = span * k as f64 / MODULUS_PROBES as f64;
                let hi = (lo + delta).min(horizon);
                best = best.max(increment_energy(spec, lo, hi)?);
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|a, b| deltas[*a].total_cmp(&deltas[*b]));
    let keep = deltas.len().div_ceil(2).max(2);
    let (xs, ys): (Vec<f64>, Vec<f64>) = order[..keep]
        .iter()
        .map(|&i| (deltas[i].ln(), modulus[i].ln()))
        .unzip();
    let fit = least_squares(&xs, &ys)
        .ok_or_else(|| invalid("deltas", "need at least two distinct values"))?;
    Ok(ModulusEstimate {
        deltas: deltas.to_vec(),
        modulus,
        alpha_hat: fit.slope,
    })
}

/// Options for [`scaled_family_check`].
#[derive(Debug, Clone, Copy)]
pub struct ScaledCheckOptions {
    /// Probe nodes are `k T / n_probe`, `k = 1..=n_probe`.
    pub n_probe: usize,
    pub quad_n: usize,
}

impl Default for ScaledCheckOptions {
    fn default() -> Self {
        Self {
            n_probe: 4,
            quad_n: 256,
        }
    }
}

/// `sup |k(εt, εs) / ε^{2·normalizer} - k_limit(t,s)|` for each `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledFamilyTable {
    pub rows: Vec<(f64, f64)>,
}

impl ScaledFamilyTable {
    /// Gaps shrink along the (decreasing) ε schedule.
    pub fn is_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,sup_gap\n");
        for (eps, gap) in &self.rows {
            out.push_str(&format!("{eps},{gap}\n"));
        }
        out
    }
}

/// Checks the small-time scaling of a kernel family against a limiting
/// covariance from the catalog, on the horizon of `limit`.
pub fn scaled_family_check(
    spec: &KernelSpec,
    epsilons: &[f64],
    normalizer: f64,
    limit: &KernelSpec,
    opts: ScaledCheckOptions,
) -> Result<ScaledFamilyTable> {
    if matches!(spec.family(), KernelFamily::Conditioned { .. }) {
        return Err(invalid(
            "family",
            "conditioned kernels are pinned to a fixed past and cannot be rescaled",
        ));
    }
    if opts.n_probe == 0 {
        return Err(invalid("n_probe", "must be positive"));
    }
    let horizon = limit.horizon();
    for w in epsilons.windows(2) {
        if w[1] >= w[0] {
            return Err(invalid("epsilons", "schedule must be strictly decreasing"));
        }
    }
    for &eps in epsilons {
        if !(eps > 0.0) || eps * horizon > spec.horizon() * (1.0 + 1e-12) {
            return Err(invalid(
                "epsilons",
                format!("ε = {eps} leaves the kernel horizon {}", spec.horizon()),
            ));
        }
    }
    let probes: Vec<f64> = (1..=opts.n_probe)
        .map(|k| horizon * k as f64 / opts.n_probe as f64)
        .collect();
    let pairs: Vec<(f64, f64)> = probes
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| probes[..=i].iter().map(move |&s| (t, s)))
        .collect();
    let limit_cov = pairs
        .par_iter()
        .map(|&(t, s)| covariance(limit, t, s, opts.quad_n))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let scale = eps.powf(2.0 * normalizer);
        let gaps = pairs
            .par_iter()
            .zip(limit_cov.par_iter())
            .map(|(&(t, s), &lim)| {
                let te = (eps * t).min(spec.horizon());
                let se = (eps * s).min(spec.horizon());
                Ok((covariance(spec, te, se, opts.quad_n)? / scale - lim).abs())
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((eps, gaps.into_iter().fold(0.0, f64::max)));
    }
    Ok(ScaledFamilyTable { rows })
}
