//! Drift/volatility catalog, model assembly and numerical checks of the
//! standing assumptions on `μ` and `σ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::stats::least_squares;

/// Closed catalog of scalar coefficient functions with exact derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFunction {
    /// `c`
    Constant { c: f64 },
    /// `max(a + b x, floor)`
    AffineFloor { a: f64, b: f64, floor: f64 },
    /// `c e^{λ x}`
    Exponential { c: f64, lambda: f64 },
    /// `c (1 + x²)^{β/2}`
    PowerGrowth { c: f64, beta: f64 },
    /// `lo + (hi - lo) / (1 + e^{-x})`
    Sigmoid { lo: f64, hi: f64 },
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ScalarFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::AffineFloor { a, b, floor } => (a + b * x).max(floor),
            Self::Exponential { c, lambda } => c * (lambda * x).exp(),
            Self::PowerGrowth { c, beta } => c * (1.0 + x * x).powf(0.5 * beta),
            Self::Sigmoid { lo, hi } => lo + (hi - lo) * logistic(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::AffineFloor { a, b, floor } => {
                if a + b * x > floor {
                    b
                } else {
                    0.0
                }
            }
            Self::Exponential { c, lambda } => c * lambda * (lambda * x).exp(),
            Self::PowerGrowth { c, beta } => c * beta * x * (1.0 + x * x).powf(0.5 * beta - 1.0),
            Self::Sigmoid { lo, hi } => {
                let s = logistic(x);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }

    /// Value and derivative in one call.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        (self.eval(x), self.derivative(x))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    fn check_finite(&self) -> Result<()> {
        let params: &[f64] = match self {
            Self::Constant { c } => &[*c],
            Self::AffineFloor { a, b, floor } => &[*a, *b, *floor],
            Self::Exponential { c, lambda } => &[*c, *lambda],
            Self::PowerGrowth { c, beta } => &[*c, *beta],
            Self::Sigmoid { lo, hi } => &[*lo, *hi],
        };
        if params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(invalid("function", "parameters must be finite"))
        }
    }

    /// Strict positivity on all of ℝ, as required of a volatility.
    pub fn check_volatility(&self) -> Result<()> {
        self.check_finite()?;
        let ok = match *self {
            Self::Constant { c } => c > 0.0,
            Self::AffineFloor { floor, .. } => floor > 0.0,
            Self::Exponential { c, .. } => c > 0.0,
            Self::PowerGrowth { c, .. } => c > 0.0,
            Self::Sigmoid { lo, hi } => lo > 0.0 && hi > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("sigma", format!("{self:?} is not strictly positive on ℝ")))
        }
    }

    /// Exact `(min, max)` of the function over `[-m, m]`.
    pub fn bounds(&self, m: f64) -> (f64, f64) {
        let m = m.abs();
        match *self {
            Self::Constant { c } => (c, c),
            Self::AffineFloor { a, b, floor } => {
                (floor.max(a - b.abs() * m), floor.max(a + b.abs() * m))
            }
            Self::Exponential { c, lambda } => {
                let (x, y) = (c * (-lambda.abs() * m).exp(), c * (lambda.abs() * m).exp());
                (x.min(y), x.max(y))
            }
            Self::PowerGrowth { c, beta } => {
                let x = c;
                let y = c * (1.0 + m * m).powf(0.5 * beta);
                (x.min(y), x.max(y))
            }
            Self::Sigmoid { .. } => {
                let (x, y) = (self.eval(-m), self.eval(m));
                (x.min(y), x.max(y))
            }
        }
    }

    /// Grows at most polynomially (`|f(x)| <= M1 + M2 |x|^α`).
    pub fn has_power_growth(&self) -> bool {
        match *self {
            Self::Exponential { lambda, .. } => lambda == 0.0,
            _ => true,
        }
    }
}

/// Evaluates a catalog function.
pub fn eval_fn(f: &ScalarFunction, x: f64) -> f64 {
    f.eval(x)
}

/// Model `dZ = (μ(B̂) - ½σ²(B̂)) dt + σ(B̂) d(ρ̄ W + ρ B)`, `Z_0 = x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecJson", into = "ModelSpecJson")]
pub struct ModelSpec {
    mu: ScalarFunction,
    sigma: ScalarFunction,
    rho: f64,
    rho_bar: f64,
    x0: f64,
    horizon: f64,
    kernel: KernelSpec,
}

impl ModelSpec {
    pub fn new(
        mu: ScalarFunction,
        sigma: ScalarFunction,
        rho: f64,
        x0: f64,
        horizon: f64,
        kernel: KernelSpec,
    ) -> Result<Self> {
        mu.check_finite()?;
        sigma.check_volatility()?;
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(invalid("rho", format!("correlation must lie in (-1,1), got {rho}")));
        }
        if !x0.is_finite() {
            return Err(invalid("x0", "must be finite"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        if kernel.horizon() < horizon * (1.0 - 1e-12) {
            return Err(invalid(
                "kernel.T",
                format!("kernel horizon {} shorter than model horizon {horizon}", kernel.horizon()),
            ));
        }
        Ok(Self {
            mu,
            sigma,
            rho,
            rho_bar: (1.0 - rho * rho).sqrt(),
            x0,
            horizon,
            kernel,
        })
    }

    pub fn mu(&self) -> &ScalarFunction {
        &self.mu
    }

    pub fn sigma(&self) -> &ScalarFunction {
        &self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sqrt(1 - ρ²)`.
    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Initial price `e^{x0}`.
    pub fn s0(&self) -> f64 {
        self.x0.exp()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.mu, self.sigma, rho, self.x0, self.horizon, self.kernel.clone())
    }

    pub fn with_sigma(&self, sigma: ScalarFunction) -> Result<Self> {
        Self::new(self.mu, sigma, self.rho, self.x0, self.horizon, self.kernel.clone())
    }

    pub fn with_kernel(&self, kernel: KernelSpec) -> Result<Self> {
        Self::new(self.mu, self.sigma, self.rho, self.x0, self.horizon, kernel)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let kernel = if self.kernel.horizon() < horizon {
            self.kernel.with_horizon(horizon)?
        } else {
            self.kernel.clone()
        };
        Self::new(self.mu, self.sigma, self.rho, self.x0, horizon, kernel)
    }

    /// Model warnings that do not prevent construction.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rho != 0.0 && !self.sigma.has_power_growth() {
            out.push(
                "exponential volatility in a correlated model: the explicit rate \
                 identification requires power growth of σ + |μ|"
                    .to_string(),
            );
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpecJson {
    mu: ScalarFunction,
    sigma: ScalarFunction,
    rho: f64,
    #[serde(default)]
    x0: f64,
    #[serde(rename = "T")]
    horizon: f64,
    kernel: KernelSpec,
}

impl TryFrom<ModelSpecJson> for ModelSpec {
    type Error = Error;

    fn try_from(raw: ModelSpecJson) -> Result<Self> {
        ModelSpec::new(raw.mu, raw.sigma, raw.rho, raw.x0, raw.horizon, raw.kernel)
    }
}

impl From<ModelSpec> for ModelSpecJson {
    fn from(m: ModelSpec) -> Self {
        Self {
            mu: m.mu,
            sigma: m.sigma,
            rho: m.rho,
            x0: m.x0,
            horizon: m.horizon,
            kernel: m.kernel,
        }
    }
}

/// Noise levels `ε_n`, strictly decreasing; speeds `γ_n = ε_n^{-2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpeedSchedule {
    epsilons: Vec<f64>,
}

impl SpeedSchedule {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(invalid("schedule", "needs at least one ε"));
        }
        if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(invalid("schedule", "every ε must be positive"));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("schedule", "ε values must be strictly decreasing"));
        }
        Ok(Self { epsilons })
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.epsilons.iter().map(|e| 1.0 / (e * e)).collect()
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SpeedSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpeedSchedule> for Vec<f64> {
    fn from(s: SpeedSchedule) -> Self {
        s.epsilons
    }
}

/// Window half-widths at which the local modulus `L(δ)` is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModulus {
    pub delta: f64,
    /// `max |σ(x) - σ(y)| / |x - y|` over sampled `x, y ∈ [-δ, δ]`.
    pub lipschitz: f64,
}

/// Outcome of [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub sigma_positive: bool,
    pub sigma_min_sampled: f64,
    pub continuous: bool,
    pub local_modulus: Vec<LocalModulus>,
    /// Empirical local Hölder exponent of `σ` near the origin.
    pub holder_exponent: f64,
    pub growth_exponent: f64,
    pub growth_exponent_inner: f64,
    pub power_growth: bool,
    /// Uncorrelated model: positivity and continuity.
    pub uncorrelated_ldp: bool,
    /// Correlated model: additionally local ω-continuity of σ.
    pub correlated_ldp: bool,
    /// Explicit rate identification: additionally power growth of `σ + |μ|`.
    pub rate_identification: bool,
    pub messages: Vec<String>,
}

const PROBE_SAMPLES: usize = 2001;

fn growth_fit(model: &ModelSpec, lo_r: f64, hi_r: f64) -> f64 {
    let env = |r: f64| {
        let p = model.sigma.eval(r) + model.mu.eval(r).abs();
        let m = model.sigma.eval(-r) + model.mu.eval(-r).abs();
        p.max(m)
    };
    let n = 64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|k| {
            let r = lo_r * (hi_r / lo_r).powf(k as f64 / (n - 1) as f64);
            (r.ln(), env(r).ln())
        })
        .unzip();
    least_squares(&xs, &ys).map_or(0.0, |f| f.slope)
}

/// Samples `σ` and `μ` on `probe_range` and reports positivity, a local
/// modulus of continuity and a log–log growth exponent of `σ + |μ|`.
pub fn validate_assumptions(model: &ModelSpec, probe_range: (f64, f64)) -> AssumptionReport {
    let (lo, hi) = if probe_range.0 <= probe_range.1 {
        probe_range
    } else {
        (probe_range.1, probe_range.0)
    };
    let xs: Vec<f64> = (0..PROBE_SAMPLES)
        .map(|k| lo + (hi - lo) * k as f64 / (PROBE_SAMPLES - 1) as f64)
        .collect();
    let sig: Vec<f64> = xs.iter().map(|&x| model.sigma.eval(x)).collect();
    let sigma_min_sampled = sig.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma_positive = sigma_min_sampled > 0.0 && sig.iter().all(|s| s.is_finite());
    let mut messages = Vec::new();
    if !sigma_positive {
        messages.push("σ is not strictly positive on the probe range".to_string());
    }

    let reach = lo.abs().max(hi.abs()).max(1e-3);
    let mut local_modulus = Vec::new();
    let mut delta = reach / 64.0;
    while delta <= reach * (1.0 + 1e-12) {
        let n = 512;
        let h = 2.0 * delta / n as f64;
        let lipschitz = (0..n)
            .map(|k| {
                let x = -delta + k as f64 * h;
                (model.sigma.eval(x + h) - model.sigma.eval(x)).abs() / h
            })
            .fold(0.0, f64::max);
        local_modulus.push(LocalModulus { delta, lipschitz });
        delta *= 2.0;
    }
    let continuous = local_modulus.iter().all(|m| m.lipschitz.is_finite());

    // oscillation of σ over shrinking neighbourhoods of the origin
    let radii: Vec<f64> = (0..8).map(|k| 1e-2 * 0.5f64.powi(k)).collect();
    let osc: Vec<f64> = radii
        .iter()
        .map(|&r| {
            (0..=64)
                .map(|k| {
                    let x = -0.5 + k as f64 / 64.0;
                    (model.sigma.eval(x + r) - model.sigma.eval(x)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let holder_exponent = if osc.iter().all(|o| *o > 0.0) {
        let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ly: Vec<f64> = osc.iter().map(|o| o.ln()).collect();
        least_squares(&lx, &ly).map_or(1.0, |f| f.slope)
    } else {
        // locally constant
        1.0
    };

    let growth_exponent = growth_fit(model, 0.5 * reach, reach);
    let growth_exponent_inner = growth_fit(model, 0.25 * reach, 0.5 * reach);
    let accelerating = growth_exponent - growth_exponent_inner
        > 0.25 * growth_exponent_inner.abs().max(1.0);
    let power_growth = !accelerating;
    if !power_growth {
        messages.push(format!(
            "σ + |μ| grows faster than any power (local exponents {growth_exponent_inner:.2} -> \
             {growth_exponent:.2}); rate identification not guaranteed"
        ));
    }

    let uncorrelated_ldp = sigma_positive && continuous;
    let correlated_ldp = uncorrelated_ldp && holder_exponent > 0.0;
    let rate_identification = correlated_ldp && power_growth;
    messages.extend(model.warnings());
    AssumptionReport {
        sigma_positive,
        sigma_min_sampled,
        continuous,
        local_modulus,
        holder_exponent,
        growth_exponent,
        growth_exponent_inner,
        power_growth,
        uncorrelated_ldp,
        correlated_ldp,
        rate_identification,
        messages,
    }
}
