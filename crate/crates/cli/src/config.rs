//! Experiment configuration: JSON file, dotted-path overrides, typed
//! validation with the offending key named in every error.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use volterra_ldp::kernels::KernelSpec;
use volterra_ldp::mc::{EventSpec, ShiftMode};
use volterra_ldp::{ModelSpec, RateConfig};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VLDP_OUT_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub grid: GridBlock,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub kernel_check: KernelCheckBlock,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub rate: Option<RateBlock>,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
    #[serde(default)]
    pub validate: ValidateBlock,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckBlock {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_quad_n", rename = "quad_N")]
    pub quad_n: usize,
    /// Covariance table nodes `kT/probes`.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub scaled: Option<ScaledBlock>,
}

impl Default for KernelCheckBlock {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            quad_n: default_quad_n(),
            probes: default_probes(),
            scaled: None,
        }
    }
}

fn default_deltas() -> Vec<f64> {
    (1..=8).map(|k| 0.5f64.powi(k)).collect()
}

fn default_quad_n() -> usize {
    512
}

fn default_probes() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledBlock {
    pub epsilons: Vec<f64>,
    pub normalizer: f64,
    pub limit: KernelSpec,
    #[serde(default = "default_n_probe")]
    pub n_probe: usize,
}

fn default_n_probe() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub epsilon: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub dump_paths: usize,
    /// Also run the frozen-volatility scheme with this many breakpoints.
    #[serde(default)]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Path,
    Terminal,
    Crossing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    #[serde(default)]
    pub objective: Option<ObjectiveKind>,
    /// Nodal path hypothesis, `N + 1` values starting at 0.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default, rename = "U")]
    pub barrier: Option<f64>,
    #[serde(default)]
    pub optimizer: RateConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub schedule: Vec<f64>,
    pub event: EventSpec,
    pub n_paths: usize,
    #[serde(default = "default_true")]
    pub use_is: bool,
    #[serde(default)]
    pub shift_mode: ShiftMode,
    #[serde(default = "default_min_hits")]
    pub min_hits: u64,
    #[serde(default)]
    pub optimizer: RateConfig,
}

fn default_true() -> bool {
    true
}

fn default_min_hits() -> u64 {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    #[serde(default = "default_probe_range")]
    pub probe_range: (f64, f64),
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            probe_range: default_probe_range(),
        }
    }
}

fn default_probe_range() -> (f64, f64) {
    (-10.0, 10.0)
}

/// Parses `--a.b.c value` / `--a.b.c=value` pairs. Values are read as JSON
/// when they parse, as strings otherwise.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(CliError::config(arg, "expected an override of the form --key.path value"));
        };
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::config(key, "override is missing a value"))?;
                (key.to_string(), v.clone())
            }
        };
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::config(&key, "malformed override key"));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key, value));
    }
    Ok(out)
}

/// Sets `value` at the dotted `key`, creating intermediate objects.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(&parts[..i].join("."), "cannot override inside a non-object value"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Deserializes a config value, naming the offending key on failure.
pub fn from_value(value: Value) -> Result<ExperimentConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { "<root>" } else { &path }, e.inner().to_string())
    })
}

/// Reads the config file and applies overrides.
pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config("<file>", format!("malformed JSON in {}: {e}", path.display())))?;
    for (key, v) in overrides {
        apply_override(&mut value, key, v.clone())?;
    }
    from_value(value)
}

/// Documentation of every configuration key, shown by `--help`.
pub const CONFIG_HELP: &str = "\
CONFIGURATION KEYS (JSON; unknown keys are rejected)
  model.mu, model.sigma   catalog function {\"kind\": ...}:
                            constant {c} | affine_floor {a, b, floor} | exponential {c, lambda}
                            | power_growth {c, beta} | sigmoid {lo, hi}
  model.rho               correlation in (-1, 1)
  model.x0                initial log-price (default 0)
  model.T                 horizon
  model.kernel            {\"family\": bm | fbm | rl | fou | ibm | conditioned, \"T\": ...}
                            fbm/rl: H; fou: H, a; ibm: a (order); conditioned: base, T_past
  grid.N                  number of time cells (at most 4096)
  seed                    master seed (overridden by --seed; default 0)
  output_dir              artifact directory (overridden by --out; else $VLDP_OUT_DIR; else .)
  kernel_check.deltas     lags for the kernel modulus fit (default 2^-1 .. 2^-8)
  kernel_check.quad_N     cells of the covariance quadrature (default 512)
  kernel_check.probes     covariance table nodes kT/probes (default 8)
  kernel_check.scaled     optional {epsilons, normalizer, limit: kernel, n_probe (default 4)}
  simulate.epsilon        noise level
  simulate.n_paths        replications
  simulate.dump_paths     write the first k paths as CSV (default 0)
  simulate.m              optional breakpoint count of the frozen-volatility scheme (m | N)
  rate.objective          path | terminal | crossing (optional; must match the subcommand)
  rate.x                  rate-path: nodal path, N+1 values starting at 0
  rate.y                  rate-terminal: terminal increment Z_T - x0
  rate.U                  crossing: barrier above e^x0
  rate.optimizer          {multistarts, grad_tol, max_iter, memory, seed, fd_check}
  verify.schedule         strictly decreasing noise levels (at least 4)
  verify.event            {\"kind\": \"terminal\", \"y\": ...} | {\"kind\": \"crossing\", \"U\": ...}
  verify.n_paths          replications per noise level
  verify.use_is           mean-shift importance sampling (default true)
  verify.shift_mode       both | w_only (default both)
  verify.min_hits         hits needed for a regression point (default 10)
  verify.optimizer        optimizer settings for the predicted rate
  validate.probe_range    [lo, hi] sampling range (default [-10, 10])

Any scalar leaf can be overridden after the subcommand flags, e.g.
  vldp rate-terminal --config c.json --rate.y 0.25 --rate.optimizer.multistarts 4

EXIT CODES
  0 success, 1 other failure, 2 configuration error, 3 optimizer did not converge,
  4 too few Monte-Carlo hits for the slope regression";
