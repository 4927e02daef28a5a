//! Monte-Carlo estimation of small-noise event probabilities with optional
//! mean-shift importance sampling, and LDP slope regression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::model::{ModelSpec, SpeedSchedule};
use crate::rate::{RateConfig, RateResult, RateSolver};
use crate::rng::{fill_normals, replication_rng, CHUNK};
use crate::simulate::{build_volterra_matrix, euler_core, VolterraMatrix};
use crate::stats::{least_squares, wilson_interval, Z_95};

/// Probability estimate with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_paths: u64,
    /// Paths that hit the event (under the sampling measure).
    pub n_hits: u64,
    /// `(Σ w h)² / Σ (w h)²`; equals `n_hits` for plain sampling.
    pub ess: f64,
    pub epsilon: f64,
}

/// Rare event on the log-price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// `Z_T - x0 >= y`.
    Terminal { y: f64 },
    /// `max_i Z(t_i) >= log U`.
    Crossing {
        #[serde(rename = "U")]
        barrier: f64,
    },
}

/// Which noises the importance-sampling drift acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Shift `B` by the optimal control `f` and `W` by the optimal `y`.
    #[default]
    Both,
    /// Shift only `W`.
    WOnly,
}

/// Unit-speed drifts `ḟ` (for `B`) and `ẏ` (for `W`) per cell; at noise
/// level `ε` the increments are shifted by `ε^{-1}·drift·Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceShift {
    pub b: Vec<f64>,
    pub w: Vec<f64>,
}

impl ImportanceShift {
    pub fn from_rate(result: &RateResult, mode: ShiftMode) -> Self {
        let b = match mode {
            ShiftMode::Both => result.argmin.fdot().to_vec(),
            ShiftMode::WOnly => vec![0.0; result.w_control.len()],
        };
        Self {
            b,
            w: result.w_control.clone(),
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.b.len() != grid.cells() || self.w.len() != grid.cells() {
            return Err(Error::GridMismatch("importance shift does not match the grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    sum: f64,
    sum_sq: f64,
    hits: u64,
}

fn check_model_grid(model: &ModelSpec, grid: &Grid) -> Result<()> {
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    Ok(())
}

/// Estimates `P(event)` at noise level `epsilon` from `n_paths`
/// replications of stream `seed`.
pub fn estimate_event(
    model: &ModelSpec,
    matrix: &VolterraMatrix,
    event: EventSpec,
    epsilon: f64,
    n_paths: usize,
    seed: u64,
    shift: Option<&ImportanceShift>,
) -> Result<McEstimate> {
    let grid = *matrix.grid();
    check_model_grid(model, &grid)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be positive"));
    }
    let level = match event {
        EventSpec::Terminal { y } => {
            if !y.is_finite() {
                return Err(invalid("y", "must be finite"));
            }
            model.x0() + y
        }
        EventSpec::Crossing { barrier } => {
            if !(barrier > model.s0()) {
                return Err(Error::Domain(format!(
                    "barrier U = {barrier} must exceed the initial price {}",
                    model.s0()
                )));
            }
            barrier.ln()
        }
    };
    if let Some(s) = shift {
        s.check(&grid)?;
    }
    let n = grid.cells();
    let dt = grid.step();
    let sq = dt.sqrt();
    let frozen = model.mu().is_constant() && model.sigma().is_constant();
    // per-unit-normal shifts
    let theta: Option<(Vec<f64>, Vec<f64>)> = shift.map(|s| {
        (
            s.b.iter().map(|v| v * sq / epsilon).collect(),
            s.w.iter().map(|v| v * sq / epsilon).collect(),
        )
    });
    let half_norm = theta.as_ref().map_or(0.0, |(tb, tw)| {
        0.5 * (tb.iter().map(|v| v * v).sum::<f64>() + tw.iter().map(|v| v * v).sum::<f64>())
    });
    let phi_scale = epsilon / sq;
    let inc_scale = epsilon * sq;
    let ito = epsilon * epsilon;

    let chunks = n_paths.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut xi = vec![0.0; n];
            let mut eta = vec![0.0; n];
            let mut db = vec![0.0; n];
            let mut dw = vec![0.0; n];
            let mut phi = vec![0.0; n + 1];
            let mut z = vec![0.0; n + 1];
            let mut x = vec![0.0; n + 1];
            let mut v = vec![0.0; n + 1];
            let mut acc = Partial::default();
            for k in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let mut rng = replication_rng(seed, k as u64);
                fill_normals(&mut rng, &mut xi);
                fill_normals(&mut rng, &mut eta);
                let mut log_w = 0.0;
                if let Some((tb, tw)) = &theta {
                    let mut cross = 0.0;
                    for j in 0..n {
                        cross += tb[j] * xi[j] + tw[j] * eta[j];
                        xi[j] += tb[j];
                        eta[j] += tw[j];
                    }
                    log_w = -cross - half_norm;
                }
                for j in 0..n {
                    db[j] = inc_scale * xi[j];
                    dw[j] = inc_scale * eta[j];
                }
                let phi_ref = if frozen {
                    None
                } else {
                    matrix.weights().lift_into(&xi, &mut phi);
                    phi.iter_mut().for_each(|p| *p *= phi_scale);
                    Some(phi.as_slice())
                };
                euler_core(model, dt, ito, &db, &dw, phi_ref, 1, &mut z, &mut x, &mut v);
                let hit = match event {
                    EventSpec::Terminal { .. } => z[n] >= level,
                    EventSpec::Crossing { .. } => z.iter().any(|&zi| zi >= level),
                };
                if hit {
                    let w = log_w.exp();
                    acc.sum += w;
                    acc.sum_sq += w * w;
                    acc.hits += 1;
                }
            }
            acc
        })
        .collect();
    let mut total = Partial::default();
    for p in &partials {
        total.sum += p.sum;
        total.sum_sq += p.sum_sq;
        total.hits += p.hits;
    }
    Ok(summarize(total, n_paths as u64, epsilon))
}

fn summarize(t: Partial, n_paths: u64, epsilon: f64) -> McEstimate {
    let n = n_paths as f64;
    let p_hat = (t.sum / n).min(1.0);
    let ess = if t.sum_sq > 0.0 { t.sum * t.sum / t.sum_sq } else { 0.0 };
    // effective Bernoulli count with the same variance as the estimator
    let n_eff = if t.hits == 0 || n_paths < 2 {
        n
    } else {
        let var = (t.sum_sq / n - (t.sum / n).powi(2)).max(0.0) * n / (n - 1.0) / n;
        if var > 0.0 {
            p_hat * (1.0 - p_hat) / var
        } else {
            n
        }
    };
    let (ci_lo, ci_hi) = wilson_interval(p_hat, n_eff.max(1.0), Z_95);
    McEstimate {
        p_hat,
        ci_lo,
        ci_hi,
        n_paths,
        n_hits: t.hits,
        ess: ess.min(n),
        epsilon,
    }
}

/// `P(max_i Z(t_i) >= log U)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_crossing(
    model: &ModelSpec,
    grid: &Grid,
    epsilon: f64,
    barrier: f64,
    n_paths: usize,
    seed: u64,
    shift: Option<&ImportanceShift>,
) -> Result<McEstimate> {
    let matrix = build_volterra_matrix(model.kernel(), grid)?;
    estimate_event(model, &matrix, EventSpec::Crossing { barrier }, epsilon, n_paths, seed, shift)
}

/// `P(Z_T - x0 >= y)`.
pub fn estimate_terminal_tail(
    model: &ModelSpec,
    grid: &Grid,
    epsilon: f64,
    y: f64,
    n_paths: usize,
    seed: u64,
    shift: Option<&ImportanceShift>,
) -> Result<McEstimate> {
    let matrix = build_volterra_matrix(model.kernel(), grid)?;
    estimate_event(model, &matrix, EventSpec::Terminal { y }, epsilon, n_paths, seed, shift)
}

/// Options for [`ldp_slope`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlopeOptions {
    pub use_is: bool,
    pub shift_mode: ShiftMode,
    /// Points with fewer hits are left out of the regression.
    pub min_hits: u64,
    pub rate: RateConfig,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self {
            use_is: true,
            shift_mode: ShiftMode::Both,
            min_hits: 10,
            rate: RateConfig::default(),
        }
    }
}

/// Minimum number of regression points surviving the hit filter.
pub const MIN_REGRESSION_POINTS: usize = 3;

/// Regression of `log p̂` on `ε^{-2}` against the predicted `-I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub estimates: Vec<McEstimate>,
    /// Whether each estimate entered the regression.
    pub used: Vec<bool>,
    pub slope: f64,
    pub intercept: f64,
    /// Rate `I` of the event from the rate module.
    pub rate: f64,
    /// `-I`.
    pub predicted: f64,
    pub rel_error: f64,
    pub rate_converged: bool,
    pub warnings: Vec<String>,
}

impl SlopeReport {
    /// CSV `epsilon,inv_eps_sq,p_hat,log_p_hat,ci_lo,ci_hi,n_hits`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,inv_eps_sq,p_hat,log_p_hat,ci_lo,ci_hi,n_hits\n");
        for e in &self.estimates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epsilon,
                1.0 / (e.epsilon * e.epsilon),
                e.p_hat,
                e.p_hat.ln(),
                e.ci_lo,
                e.ci_hi,
                e.n_hits
            ));
        }
        out
    }

    /// `{"slope", "intercept", "predicted", "rate", "rel_error"}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slope": self.slope,
            "intercept": self.intercept,
            "predicted": self.predicted,
            "rate": self.rate,
            "rel_error": self.rel_error,
        })
    }
}

/// Rate of the event and, for a rare event, the minimizer behind it.
/// Events the zero control already reaches cost nothing.
pub fn event_rate(solver: &RateSolver, event: EventSpec, cfg: &RateConfig) -> Result<(f64, Option<RateResult>)> {
    let model = solver.model();
    let drift = model.mu().eval(0.0);
    let horizon = model.horizon();
    match event {
        EventSpec::Terminal { y } => {
            if y <= drift * horizon {
                return Ok((0.0, None));
            }
            let r = solver.terminal(y, cfg)?;
            Ok((r.value, Some(r)))
        }
        EventSpec::Crossing { barrier } => {
            let a = (barrier / model.s0()).ln();
            if a <= drift.max(0.0) * horizon {
                return Ok((0.0, None));
            }
            let r = solver.crossing(barrier, cfg)?;
            Ok((r.value, Some(r)))
        }
    }
}

/// Estimates the event probability along the schedule and regresses
/// `log p̂` on `ε^{-2}`.
pub fn ldp_slope(
    model: &ModelSpec,
    grid: &Grid,
    schedule: &SpeedSchedule,
    event: EventSpec,
    n_paths: usize,
    seed: u64,
    opts: &SlopeOptions,
) -> Result<SlopeReport> {
    if schedule.len() < 4 {
        return Err(invalid("schedule", format!("need at least 4 ε values, got {}", schedule.len())));
    }
    let solver = RateSolver::new(model, grid)?;
    let mut warnings = Vec::new();
    if matches!(event, EventSpec::Crossing { .. }) && !(model.mu().is_constant() && model.mu().eval(0.0) == 0.0) {
        warnings.push("crossing prediction assumes a driftless model (μ = 0)".to_string());
    }
    let (rate, minimizer) = event_rate(&solver, event, &opts.rate)?;
    let rate_converged = minimizer.as_ref().is_none_or(|r| r.converged);
    if !rate_converged {
        warnings.push("rate minimization did not reach the gradient tolerance".to_string());
    }
    let shift = match (&minimizer, opts.use_is) {
        (Some(r), true) => Some(ImportanceShift::from_rate(r, opts.shift_mode)),
        _ => None,
    };
    let matrix = VolterraMatrix::from_weights(solver.weights().clone());
    let mut estimates = Vec::with_capacity(schedule.len());
    for &eps in schedule.epsilons() {
        estimates.push(estimate_event(model, &matrix, event, eps, n_paths, seed, shift.as_ref())?);
    }
    let used: Vec<bool> = estimates.iter().map(|e| e.n_hits >= opts.min_hits && e.p_hat > 0.0).collect();
    let failed: Vec<f64> = estimates
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(e, _)| e.epsilon)
        .collect();
    if used.iter().filter(|u| **u).count() < MIN_REGRESSION_POINTS {
        return Err(Error::InsufficientHits {
            failed,
            min_hits: opts.min_hits,
        });
    }
    if !failed.is_empty() {
        warnings.push(format!("dropped ε values with fewer than {} hits: {failed:?}", opts.min_hits));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = estimates
        .iter()
        .zip(&used)
        .filter(|(_, u)| **u)
        .map(|(e, _)| (1.0 / (e.epsilon * e.epsilon), e.p_hat.ln()))
        .unzip();
    let fit = least_squares(&xs, &ys).ok_or_else(|| invalid("schedule", "ε values must be distinct"))?;
    let predicted = -rate;
    let rel_error = if predicted.abs() > 1e-12 {
        (fit.slope - predicted).abs() / predicted.abs()
    } else {
        fit.slope.abs()
    };
    Ok(SlopeReport {
        estimates,
        used,
        slope: fit.slope,
        intercept: fit.intercept,
        rate,
        predicted,
        rel_error,
        rate_converged,
        warnings,
    })
}
