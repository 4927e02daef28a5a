//! Subcommand execution and artifact writing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;
use volterra_ldp::kernels::{covariance, modulus_estimate, scaled_family_check, CellWeights, ScaledCheckOptions};
use volterra_ldp::mc::{ldp_slope, SlopeOptions};
use volterra_ldp::model::validate_assumptions;
use volterra_ldp::simulate::{
    build_volterra_matrix, simulate_approx_log_price, simulate_log_price, PathBundle,
};
use volterra_ldp::{Grid, Objective, PathHypothesis, RateResult, RateSolver, SpeedSchedule};

use crate::config::{self, ExperimentConfig, ObjectiveKind, OUT_DIR_ENV};
use crate::error::CliError;

/// Supported subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckKernel,
    Simulate,
    RatePath,
    RateTerminal,
    Crossing,
    VerifyLdp,
    ValidateModel,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CheckKernel => "check-kernel",
            Self::Simulate => "simulate",
            Self::RatePath => "rate-path",
            Self::RateTerminal => "rate-terminal",
            Self::Crossing => "crossing",
            Self::VerifyLdp => "verify-ldp",
            Self::ValidateModel => "validate-model",
        }
    }
}

/// Inputs of one run besides the subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Raw `--key.path value` override tokens.
    pub overrides: Vec<String>,
    /// Fixed timestamp for artifact names (current time when absent).
    pub timestamp: Option<u64>,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

/// `--seed` wins over the config seed; the default is 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config).unwrap_or(0)
}

/// `--out`, then the config `output_dir`, then the environment, then `.`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>, env: Option<String>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

struct Writer {
    dir: PathBuf,
    base: String,
    written: Vec<PathBuf>,
}

impl Writer {
    fn write(&mut self, suffix: &str, ext: &str, content: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Other(format!("cannot create {}: {e}", self.dir.display())))?;
        let path = self.dir.join(format!("{}{suffix}.{ext}", self.base));
        std::fs::write(&path, content)
            .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, suffix: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        text.push('\n');
        self.write(suffix, "json", &text)
    }
}

/// Loads the configuration and runs `cmd`.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<Outcome, CliError> {
    let overrides = config::parse_overrides(&opts.overrides)?;
    let cfg = config::load(&opts.config, &overrides)?;
    let seed = resolve_seed(opts.seed, cfg.seed);
    let grid = Grid::new(cfg.grid.n, cfg.model.horizon()).map_err(|e| CliError::from_core("grid.N", e))?;
    let timestamp = opts.timestamp.unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    });
    let mut writer = Writer {
        dir: resolve_out_dir(opts.out.as_deref(), cfg.output_dir.as_deref(), std::env::var(OUT_DIR_ENV).ok()),
        base: format!("{}-{timestamp}-{seed}", cmd.name()),
        written: Vec::new(),
    };
    let (exit_code, summary) = match cmd {
        Command::CheckKernel => check_kernel(&cfg, &grid, &mut writer)?,
        Command::Simulate => simulate(&cfg, &grid, seed, &mut writer)?,
        Command::RatePath | Command::RateTerminal | Command::Crossing => rate(cmd, &cfg, &grid, seed, &mut writer)?,
        Command::VerifyLdp => verify(&cfg, &grid, seed, &mut writer)?,
        Command::ValidateModel => validate(&cfg, &mut writer)?,
    };
    Ok(Outcome {
        exit_code,
        summary,
        artifacts: writer.written,
    })
}

fn check_kernel(cfg: &ExperimentConfig, grid: &Grid, w: &mut Writer) -> Result<(i32, String), CliError> {
    let block = &cfg.kernel_check;
    let kernel = cfg.model.kernel();
    let horizon = cfg.model.horizon();
    if block.probes == 0 {
        return Err(CliError::config("kernel_check.probes", "must be positive"));
    }
    let nodes: Vec<f64> = (1..=block.probes).map(|k| horizon * k as f64 / block.probes as f64).collect();
    let pairs: Vec<(f64, f64)> = nodes.iter().flat_map(|&t| nodes.iter().map(move |&s| (t, s))).collect();
    let covs = pairs
        .par_iter()
        .map(|&(t, s)| covariance(kernel, t, s, block.quad_n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::from_core("kernel_check.quad_N", e))?;
    let mut csv = String::from("t,s,covariance\n");
    for ((t, s), c) in pairs.iter().zip(&covs) {
        writeln!(csv, "{t},{s},{c}").unwrap();
    }
    w.write("-covariance", "csv", &csv)?;

    let modulus = modulus_estimate(kernel, &block.deltas).map_err(|e| CliError::from_core("kernel_check.deltas", e))?;
    let mut csv = String::from("delta,modulus\n");
    for (d, m) in modulus.deltas.iter().zip(&modulus.modulus) {
        writeln!(csv, "{d},{m}").unwrap();
    }
    w.write("-modulus", "csv", &csv)?;

    if let Some(scaled) = &block.scaled {
        let opts = ScaledCheckOptions {
            n_probe: scaled.n_probe,
            quad_n: block.quad_n,
        };
        let table = scaled_family_check(kernel, &scaled.epsilons, scaled.normalizer, &scaled.limit, opts)
            .map_err(|e| CliError::from_core("kernel_check.scaled", e))?;
        w.write("-scaled", "csv", &table.to_csv())?;
    }
    let weights = CellWeights::build(kernel, grid).map_err(|e| CliError::from_core("grid.N", e))?;
    w.json(
        "",
        &json!({
            "alpha_hat": modulus.alpha_hat,
            "holder_exponent": kernel.holder_exponent(),
            "singular_on_diagonal": kernel.singular_on_diagonal(),
            "singular_at_origin": kernel.singular_at_origin(),
            "low_confidence": kernel.low_confidence(),
            "max_row_norm": weights.max_row_norm(),
        }),
    )?;
    let mut summary = format!("kernel modulus exponent {:.4}", modulus.alpha_hat);
    if kernel.low_confidence() {
        summary.push_str(" (low confidence: H < 0.1)");
    }
    Ok((0, summary))
}

fn simulate(cfg: &ExperimentConfig, grid: &Grid, seed: u64, w: &mut Writer) -> Result<(i32, String), CliError> {
    let block = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::config("simulate", "missing block"))?;
    if !(block.epsilon >= 0.0 && block.epsilon.is_finite()) {
        return Err(CliError::config("simulate.epsilon", "must be a nonnegative number"));
    }
    if block.n_paths == 0 {
        return Err(CliError::config("simulate.n_paths", "must be positive"));
    }
    if let Some(m) = block.m {
        if m == 0 || grid.cells() % m != 0 {
            return Err(CliError::config("simulate.m", format!("{m} must divide grid.N = {}", grid.cells())));
        }
    }
    let matrix = build_volterra_matrix(cfg.model.kernel(), grid).map_err(|e| CliError::from_core("grid.N", e))?;
    let model = &cfg.model;
    let rows = (0..block.n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let bundle = PathBundle::generate(&matrix, seed, k);
            let sim = simulate_log_price(model, &bundle, block.epsilon)?;
            let gap = match block.m {
                Some(m) => {
                    let approx = simulate_approx_log_price(model, &bundle, block.epsilon, m)?;
                    Some(sim.z.iter().zip(&approx.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                }
                None => None,
            };
            let dump = ((k as usize) < block.dump_paths).then(|| sim.to_csv(&bundle));
            let z_t = *sim.z.last().unwrap();
            let max_z = sim.z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((z_t, max_z, gap, dump))
        })
        .collect::<Result<Vec<_>, volterra_ldp::Error>>()
        .map_err(|e| CliError::from_core("simulate", e))?;
    let mut csv = String::from(if block.m.is_some() { "replication,Z_T,max_Z,sup_gap\n" } else { "replication,Z_T,max_Z\n" });
    for (k, (z_t, max_z, gap, _)) in rows.iter().enumerate() {
        match gap {
            Some(g) => writeln!(csv, "{k},{z_t},{max_z},{g}").unwrap(),
            None => writeln!(csv, "{k},{z_t},{max_z}").unwrap(),
        }
    }
    w.write("", "csv", &csv)?;
    for (k, (_, _, _, dump)) in rows.iter().enumerate() {
        if let Some(text) = dump {
            w.write(&format!("-path{k}"), "csv", text)?;
        }
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    w.json(
        "",
        &json!({"epsilon": block.epsilon, "n_paths": block.n_paths, "mean_Z_T": mean, "var_Z_T": var}),
    )?;
    Ok((0, format!("simulated {} paths: mean Z_T {mean:.6}, var Z_T {var:.6}", block.n_paths)))
}

fn rate(cmd: Command, cfg: &ExperimentConfig, grid: &Grid, seed: u64, w: &mut Writer) -> Result<(i32, String), CliError> {
    let block = cfg.rate.as_ref().ok_or_else(|| CliError::config("rate", "missing block"))?;
    let expected = match cmd {
        Command::RatePath => ObjectiveKind::Path,
        Command::RateTerminal => ObjectiveKind::Terminal,
        _ => ObjectiveKind::Crossing,
    };
    if let Some(kind) = block.objective {
        if kind != expected {
            return Err(CliError::config(
                "rate.objective",
                format!("{kind:?} does not match subcommand {}", cmd.name()),
            ));
        }
    }
    let (objective, key) = match expected {
        ObjectiveKind::Path => {
            let x = block.x.clone().ok_or_else(|| CliError::config("rate.x", "required by rate-path"))?;
            let path = PathHypothesis::new(*grid, x).map_err(|e| CliError::from_core("rate.x", e))?;
            (Objective::Pathwise(path), "rate.x")
        }
        ObjectiveKind::Terminal => {
            let y = block.y.ok_or_else(|| CliError::config("rate.y", "required by rate-terminal"))?;
            (Objective::Terminal { y }, "rate.y")
        }
        ObjectiveKind::Crossing => {
            let barrier = block.barrier.ok_or_else(|| CliError::config("rate.U", "required by crossing"))?;
            (Objective::Crossing { barrier }, "rate.U")
        }
    };
    let solver = RateSolver::new(&cfg.model, grid).map_err(|e| CliError::from_core("grid.N", e))?;
    let mut opt = block.optimizer;
    // the optimizer seed follows the run seed unless set explicitly
    if opt.seed == 0 {
        opt.seed = seed;
    }
    let result = solver.minimize(&objective, &opt).map_err(|e| CliError::from_core(key, e))?;
    write_rate(&result, &solver, w)?;
    let mut summary = format!("{} rate {:.8}", cmd.name(), result.value);
    if let Some(t) = result.t_star {
        write!(summary, " at t* = {t}").unwrap();
    }
    if result.converged {
        Ok((0, summary))
    } else {
        summary.push_str(&format!(" (not converged: gradient norm {:.3e})", result.grad_norm));
        Ok((3, summary))
    }
}

fn write_rate(result: &RateResult, solver: &RateSolver, w: &mut Writer) -> Result<(), CliError> {
    w.json("", &result.summary_json())?;
    let grid = solver.grid();
    let fhat = solver.weights().lift(result.argmin.fdot());
    let mut csv = String::from("t,fdot,fhat,ydot\n");
    for (k, (f, y)) in result.argmin.fdot().iter().zip(&result.w_control).enumerate() {
        writeln!(csv, "{},{f},{},{y}", grid.node(k + 1), fhat[k + 1]).unwrap();
    }
    w.write("", "csv", &csv)
}

fn verify(cfg: &ExperimentConfig, grid: &Grid, seed: u64, w: &mut Writer) -> Result<(i32, String), CliError> {
    let block = cfg.verify.as_ref().ok_or_else(|| CliError::config("verify", "missing block"))?;
    let schedule = SpeedSchedule::new(block.schedule.clone()).map_err(|e| CliError::from_core("verify.schedule", e))?;
    if block.n_paths == 0 {
        return Err(CliError::config("verify.n_paths", "must be positive"));
    }
    let opts = SlopeOptions {
        use_is: block.use_is,
        shift_mode: block.shift_mode,
        min_hits: block.min_hits,
        rate: block.optimizer,
    };
    let report = ldp_slope(&cfg.model, grid, &schedule, block.event, block.n_paths, seed, &opts)
        .map_err(|e| CliError::from_core("verify", e))?;
    w.write("", "csv", &report.to_csv())?;
    let mut summary_json = report.summary_json();
    summary_json["warnings"] = json!(report.warnings);
    w.json("", &summary_json)?;
    Ok((
        0,
        format!(
            "slope {:.4} vs predicted {:.4} (relative error {:.3})",
            report.slope, report.predicted, report.rel_error
        ),
    ))
}

fn validate(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(i32, String), CliError> {
    let (lo, hi) = cfg.validate.probe_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::config("validate.probe_range", "must be a bounded interval [lo, hi] with lo < hi"));
    }
    let report = validate_assumptions(&cfg.model, (lo, hi));
    w.json("", &serde_json::to_value(&report).expect("report serializes"))?;
    Ok((
        0,
        format!(
            "uncorrelated LDP: {}, correlated LDP: {}, rate identification: {}",
            report.uncorrelated_ldp, report.correlated_ldp, report.rate_identification
        ),
    ))
}
