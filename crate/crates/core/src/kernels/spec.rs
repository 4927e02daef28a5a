use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, QuadConfig};

/// Hurst exponents below this threshold are flagged as low-confidence: the
/// accuracy order of the cell quadrature is not characterised there.
pub const LOW_CONFIDENCE_HURST: f64 = 0.1;

/// Molchan–Golosov representation of fractional Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fbm {
    hurst: f64,
    c_h: f64,
}

impl Fbm {
    pub fn new(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let c_h = (2.0 * hurst * gamma(1.5 - hurst)
            / (gamma(hurst + 0.5) * gamma(2.0 - 2.0 * hurst)))
        .sqrt();
        Ok(Self { hurst, c_h })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Normalising constant `c_H`.
    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    fn half_exp(&self) -> f64 {
        self.hurst - 0.5
    }

    fn is_brownian(&self) -> bool {
        self.hurst == 0.5
    }

    /// `∫_s^t u^{H-3/2} (u-s)^{H-1/2} du`. On `[s, 2s]` the change of
    /// variables `u = s + s v^q`, `q = 3/(H+1/2)`, turns the singular factor
    /// at `u = s` into `v^2`; beyond `2s` the integrand is smooth in `log u`.
    fn tail_integral(&self, t: f64, s: f64) -> Result<f64> {
        let h = self.hurst;
        let q = 3.0 / (h + 0.5);
        let mid = t.min(2.0 * s);
        let width = mid - s;
        let near = integrate(
            |v| v * v * (s + width * v.powf(q)).powf(h - 1.5),
            0.0,
            1.0,
            QuadConfig::default(),
        )?;
        let mut total = q * width.powf(h + 0.5) * near;
        if t > mid {
            let far = integrate(
                |y| {
                    let u = y.exp();
                    (u * (u - s)).powf(h - 0.5)
                },
                mid.ln(),
                t.ln(),
                QuadConfig::default(),
            )?;
            total += far;
        }
        Ok(total)
    }

    /// `K_H(t,s)`, for `0 < s <= t`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if s > t || t <= 0.0 {
            return Ok(0.0);
        }
        if self.is_brownian() {
            return Ok(1.0);
        }
        let h = self.half_exp();
        if s <= 0.0 {
            return Err(Error::Singular { t, s });
        }
        if s == t {
            return if h > 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Singular { t, s })
            };
        }
        let width = t - s;
        let lead = (t / s).powf(h) * width.powf(h);
        Ok(self.c_h * (lead - h * s.powf(-h) * self.tail_integral(t, s)?))
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(invalid("H", format!("Hurst index must lie in (0,1), got {h}")))
    }
}

/// The Volterra kernel families supported by the catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    BrownianMotion,
    FractionalBm(Fbm),
    RiemannLiouville { hurst: f64 },
    /// Fractional Ornstein–Uhlenbeck with mean reversion `a`.
    FractionalOu { fbm: Fbm, a: f64 },
    /// `a`-fold integrated Brownian motion.
    IntegratedBm { order: u32 },
    /// Kernel conditioned on the past up to `past`: `K(past + t, past + s)`.
    Conditioned { base: Box<KernelSpec>, past: f64 },
}

/// A Volterra kernel `K(t,s)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecJson", into = "KernelSpecJson")]
pub struct KernelSpec {
    family: KernelFamily,
    horizon: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        match &family {
            KernelFamily::RiemannLiouville { hurst } => check_hurst(*hurst)?,
            KernelFamily::FractionalOu { a, .. } if !(a.is_finite() && *a > 0.0) => {
                return Err(invalid("a", format!("mean reversion must be positive, got {a}")));
            }
            KernelFamily::Conditioned { base, past } => {
                if !(past.is_finite() && *past > 0.0) {
                    return Err(invalid("T_past", format!("must be positive, got {past}")));
                }
                if base.horizon < past + horizon - 1e-12 {
                    return Err(invalid(
                        "base.T",
                        format!(
                            "base kernel horizon {} does not cover T_past + T = {}",
                            base.horizon,
                            past + horizon
                        ),
                    ));
                }
            }
            _ => {}
        }
        Ok(Self { family, horizon })
    }

    pub fn brownian(horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::BrownianMotion, horizon)
    }

    pub fn fbm(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::FractionalBm(Fbm::new(hurst)?), horizon)
    }

    pub fn riemann_liouville(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::RiemannLiouville { hurst }, horizon)
    }

    pub fn fractional_ou(hurst: f64, a: f64, horizon: f64) -> Result<Self> {
        Self::new(
            KernelFamily::FractionalOu {
                fbm: Fbm::new(hurst)?,
                a,
            },
            horizon,
        )
    }

    pub fn integrated_bm(order: u32, horizon: f64) -> Result<Self> {
        Self::new(KernelFamily::IntegratedBm { order }, horizon)
    }

    pub fn conditioned(base: KernelSpec, past: f64, horizon: f64) -> Result<Self> {
        Self::new(
            KernelFamily::Conditioned {
                base: Box::new(base),
                past,
            },
            horizon,
        )
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Same family on a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.family.clone(), horizon)
    }

    /// Hurst index for the fractional families.
    pub fn hurst(&self) -> Option<f64> {
        match &self.family {
            KernelFamily::FractionalBm(f) | KernelFamily::FractionalOu { fbm: f, .. } => {
                Some(f.hurst())
            }
            KernelFamily::RiemannLiouville { hurst } => Some(*hurst),
            KernelFamily::Conditioned { base, .. } => base.hurst(),
            _ => None,
        }
    }

    /// Hölder exponent `α` of the kernel modulus `M(δ) <= c δ^α`.
    pub fn holder_exponent(&self) -> f64 {
        match &self.family {
            KernelFamily::BrownianMotion => 1.0,
            KernelFamily::FractionalBm(f) | KernelFamily::FractionalOu { fbm: f, .. } => {
                (2.0 * f.hurst()).min(1.0)
            }
            KernelFamily::RiemannLiouville { hurst } => 2.0 * hurst,
            KernelFamily::IntegratedBm { order } => 2.0 * *order as f64 + 1.0,
            KernelFamily::Conditioned { base, .. } => base.holder_exponent(),
        }
    }

    /// `K(t,·)` blows up as `s -> t`.
    pub fn singular_on_diagonal(&self) -> bool {
        match &self.family {
            KernelFamily::FractionalBm(f) | KernelFamily::FractionalOu { fbm: f, .. } => {
                f.hurst() < 0.5
            }
            KernelFamily::RiemannLiouville { hurst } => *hurst < 0.5,
            KernelFamily::Conditioned { base, .. } => base.singular_on_diagonal(),
            _ => false,
        }
    }

    /// `K(t,·)` blows up as `s -> 0`.
    pub fn singular_at_origin(&self) -> bool {
        match &self.family {
            KernelFamily::FractionalBm(f) | KernelFamily::FractionalOu { fbm: f, .. } => {
                f.hurst() != 0.5
            }
            _ => false,
        }
    }

    pub fn low_confidence(&self) -> bool {
        self.hurst().is_some_and(|h| h < LOW_CONFIDENCE_HURST)
    }

    pub(crate) fn check_domain(&self, t: f64, s: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon;
        if !(t.is_finite() && s.is_finite()) || s < 0.0 || t < 0.0 || t > self.horizon + slack {
            return Err(Error::Domain(format!(
                "kernel arguments (t={t}, s={s}) outside 0 <= s, 0 <= t <= T={}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Evaluates `K(t,s)`; zero for `s > t` and at `t = 0`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.check_domain(t, s)?;
        self.eval_unchecked(t, s)
    }

    pub(crate) fn eval_unchecked(&self, t: f64, s: f64) -> Result<f64> {
        if s > t || t <= 0.0 {
            return Ok(0.0);
        }
        match &self.family {
            KernelFamily::BrownianMotion => Ok(1.0),
            KernelFamily::FractionalBm(f) => f.eval(t, s),
            KernelFamily::RiemannLiouville { hurst } => {
                let h = hurst - 0.5;
                if s == t {
                    return match h {
                        h if h > 0.0 => Ok(0.0),
                        h if h == 0.0 => Ok(1.0 / gamma(hurst + 0.5)),
                        _ => Err(Error::Singular { t, s }),
                    };
                }
                Ok((t - s).powf(h) / gamma(hurst + 0.5))
            }
            KernelFamily::FractionalOu { fbm, a } => fou_eval(fbm, *a, t, s),
            KernelFamily::IntegratedBm { order } => {
                Ok((t - s).powi(*order as i32) / factorial(*order))
            }
            KernelFamily::Conditioned { base, past } => base.eval_unchecked(past + t, past + s),
        }
    }
}

/// `K_H(t,s) - a ∫_s^t e^{-a(t-u)} K_H(u,s) du`.
///
/// Exchanging the order of integration in the inner `K_H(u,s)` term leaves
/// `c_H [(t/s)^h (t-s)^h - s^{-h} ∫_s^t (u-s)^h u^{h-1} e^{-a(t-u)} (a u + h) du]`
/// with `h = H - 1/2`, a single integral with the same endpoint singularity
/// as `K_H`.
fn fou_eval(fbm: &Fbm, a: f64, t: f64, s: f64) -> Result<f64> {
    let hurst = fbm.hurst();
    let h = hurst - 0.5;
    if s <= 0.0 && h != 0.0 {
        return Err(Error::Singular { t, s });
    }
    if s >= t {
        return match h {
            h if h > 0.0 => Ok(0.0),
            h if h == 0.0 => Ok(1.0),
            _ => Err(Error::Singular { t, s }),
        };
    }
    if h == 0.0 {
        return Ok((-a * (t - s)).exp());
    }
    let width = t - s;
    let p = 1.0 / (hurst + 0.5);
    let f = |v: f64| {
        let u = s + width * v.powf(p);
        (-a * (t - u)).exp() * u.powf(h - 1.0) * (a * u + h)
    };
    let reduced = p * integrate(f, 0.0, 1.0, QuadConfig::default())?;
    let lead = (t / s).powf(h) * width.powf(h);
    Ok(fbm.c_h() * (lead - s.powf(-h) * width.powf(hurst + 0.5) * reduced))
}

pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Wire form: `{"family": "fbm", "H": 0.3, "T": 1.0}` and friends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecJson {
    family: String,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    hurst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<Box<KernelSpecJson>>,
    #[serde(rename = "T_past", default, skip_serializing_if = "Option::is_none")]
    past: Option<f64>,
    #[serde(rename = "T")]
    horizon: f64,
}

impl TryFrom<KernelSpecJson> for KernelSpec {
    type Error = Error;

    fn try_from(raw: KernelSpecJson) -> Result<Self> {
        let need = |v: Option<f64>, name: &'static str| {
            v.ok_or_else(|| invalid(name, format!("required for family `{}`", raw.family)))
        };
        let family = match raw.family.as_str() {
            "bm" => KernelFamily::BrownianMotion,
            "fbm" => KernelFamily::FractionalBm(Fbm::new(need(raw.hurst, "H")?)?),
            "rl" => KernelFamily::RiemannLiouville {
                hurst: need(raw.hurst, "H")?,
            },
            "fou" => KernelFamily::FractionalOu {
                fbm: Fbm::new(need(raw.hurst, "H")?)?,
                a: need(raw.a, "a")?,
            },
            "ibm" => {
                let a = need(raw.a, "a")?;
                if a < 0.0 || a.fract() != 0.0 || a > 20.0 {
                    return Err(invalid("a", format!("order must be an integer in 0..=20, got {a}")));
                }
                KernelFamily::IntegratedBm { order: a as u32 }
            }
            "conditioned" => {
                let base = raw
                    .base
                    .ok_or_else(|| invalid("base", "required for family `conditioned`"))?;
                KernelFamily::Conditioned {
                    base: Box::new(KernelSpec::try_from(*base)?),
                    past: need(raw.past, "T_past")?,
                }
            }
            other => {
                return Err(invalid(
                    "family",
                    format!("unknown kernel family `{other}` (expected bm, fbm, rl, fou, ibm, conditioned)"),
                ))
            }
        };
        KernelSpec::new(family, raw.horizon)
    }
}

impl From<KernelSpec> for KernelSpecJson {
    fn from(spec: KernelSpec) -> Self {
        let mut raw = KernelSpecJson {
            family: String::new(),
            hurst: None,
            a: None,
            base: None,
            past: None,
            horizon: spec.horizon,
        };
        match spec.family {
            KernelFamily::BrownianMotion => raw.family = "bm".into(),
            KernelFamily::FractionalBm(f) => {
                raw.family = "fbm".into();
                raw.hurst = Some(f.hurst());
            }
            KernelFamily::RiemannLiouville { hurst } => {
                raw.family = "rl".into();
                raw.hurst = Some(hurst);
            }
            KernelFamily::FractionalOu { fbm, a } => {
                raw.family = "fou".into();
                raw.hurst = Some(fbm.hurst());
                raw.a = Some(a);
            }
            KernelFamily::IntegratedBm { order } => {
                raw.family = "ibm".into();
                raw.a = Some(order as f64);
            }
            KernelFamily::Conditioned { base, past } => {
                raw.family = "conditioned".into();
                raw.base = Some(Box::new((*base).into()));
                raw.past = Some(past);
            }
        }
        raw
    }
}
