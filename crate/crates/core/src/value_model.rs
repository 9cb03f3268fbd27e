//! Safety/cost map, agent valuations and the law of the premium value.
//!
//! An agent draws a total value `V` from a [`ValueFamily`] and a split
//! `λ ~ U[0, 1/2]`. The premium part `v_p = λV` is what agents compete for in
//! SIRA, and its distribution drives the equilibrium bid. For the two
//! supported families that distribution has a piecewise closed form with a
//! single breakpoint at `p_eps / 2`, provided `V` is conditioned on
//! `[p_eps, 1]` (only such agents can afford the threshold at all).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_closed, Error, Result};

/// Smallest admissible threshold price. `ln(p_eps)` and `1 / (p_eps - 1)`
/// appear in the closed forms, so both ends of `(0, 1)` are excluded.
pub const P_EPS_MIN: f64 = 1e-6;
pub const P_EPS_MAX: f64 = 1.0 - 1e-6;

/// Upper end of the premium support: `λ <= 1/2` and `V <= 1`.
pub const PREMIUM_MAX: f64 = 0.5;

/// Round-off allowed on a probability before it is an error.
const CLAMP_SLACK: f64 = 1e-14;

pub fn validate_p_eps(p_eps: f64) -> Result<f64> {
    check_closed("p_eps", p_eps, P_EPS_MIN, P_EPS_MAX, "[1e-6, 1 - 1e-6]")
}

/// Strictly increasing map from safety to training cost, `M(s) = s^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyCostModel {
    gamma: f64,
}

impl Default for SafetyCostModel {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

impl SafetyCostModel {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self { gamma })
        } else {
            Err(Error::Domain {
                name: "gamma",
                value: gamma,
                domain: "(0, inf)",
            })
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `M(s)`, unchecked.
    pub fn cost(&self, safety: f64) -> f64 {
        if self.gamma == 1.0 {
            safety
        } else {
            safety.powf(self.gamma)
        }
    }

    /// `M⁻¹(b)`, unchecked.
    pub fn safety(&self, cost: f64) -> f64 {
        if self.gamma == 1.0 {
            cost
        } else {
            cost.powf(self.gamma.recip())
        }
    }

    /// Price of reaching safety `epsilon`, `p_eps = M(epsilon)`.
    pub fn price_of_safety(&self, epsilon: f64) -> Result<f64> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain {
                name: "epsilon",
                value: epsilon,
                domain: "(0, 1)",
            });
        }
        Ok(self.cost(epsilon))
    }

    /// Safety level bought by spending `bid`.
    pub fn safety_from_bid(&self, bid: f64) -> Result<f64> {
        if !(bid > 0.0 && bid <= 1.0) {
            return Err(Error::Domain {
                name: "bid",
                value: bid,
                domain: "(0, 1]",
            });
        }
        Ok(self.safety(bid))
    }
}

/// Distribution of an agent's total value on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueFamily {
    Uniform01,
    /// Beta(2, 2): density `6x(1-x)`, CDF `3x² - 2x³`.
    Beta22,
}

impl fmt::Display for ValueFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueFamily::Uniform01 => "uniform",
            ValueFamily::Beta22 => "beta22",
        })
    }
}

impl FromStr for ValueFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "uniform01" => Ok(ValueFamily::Uniform01),
            "beta" | "beta22" => Ok(ValueFamily::Beta22),
            other => Err(Error::Config(format!(
                "unknown value family {other:?} (expected uniform or beta22)"
            ))),
        }
    }
}

pub fn beta22_cdf(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

pub fn beta22_pdf(x: f64) -> f64 {
    6.0 * x * (1.0 - x)
}

/// Inverse of [`beta22_cdf`] by Newton's method safeguarded with bisection.
pub fn beta22_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    // the CDF is close to linear around the median
    let mut x = u;
    for _ in 0..200 {
        let r = beta22_cdf(x) - u;
        if r.abs() <= 4.0 * f64::EPSILON * u.max(1e-300) || hi - lo <= f64::EPSILON * x {
            break;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = beta22_pdf(x);
        let newton = x - r / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

impl ValueFamily {
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            ValueFamily::Uniform01 => x,
            ValueFamily::Beta22 => beta22_cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            ValueFamily::Uniform01 => 1.0,
            ValueFamily::Beta22 => beta22_pdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        0.5
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            ValueFamily::Uniform01 => u,
            ValueFamily::Beta22 => beta22_quantile(u),
        }
    }

    /// Quantile of the family conditioned on `[lower, 1]`. One uniform in,
    /// one value out, so truncated streams stay aligned with untruncated ones.
    pub fn truncated_quantile(&self, lower: f64, u: f64) -> f64 {
        match self {
            ValueFamily::Uniform01 => lower + u * (1.0 - lower),
            ValueFamily::Beta22 => {
                let base = beta22_cdf(lower);
                beta22_quantile(base + u * (1.0 - base)).max(lower)
            }
        }
    }

    /// `P(V >= lower)`: the normalizer of the truncated law.
    pub fn survival(&self, lower: f64) -> f64 {
        1.0 - self.cdf(lower)
    }
}

/// One agent's private draw and the split into deployment and premium value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentValuation {
    pub total_value: f64,
    pub scaling_factor: f64,
    pub deployment_value: f64,
    pub premium_value: f64,
}

impl AgentValuation {
    pub fn new(total_value: f64, scaling_factor: f64) -> Result<Self> {
        check_closed("total_value", total_value, 0.0, 1.0, "[0, 1]")?;
        check_closed(
            "scaling_factor",
            scaling_factor,
            0.0,
            PREMIUM_MAX,
            "[0, 1/2]",
        )?;
        let premium_value = scaling_factor * total_value;
        Ok(Self {
            total_value,
            scaling_factor,
            deployment_value: total_value - premium_value,
            premium_value,
        })
    }

    /// Valuation with a prescribed `(v_d, v_p)` split.
    pub fn from_split(deployment_value: f64, premium_value: f64) -> Result<Self> {
        check_closed("premium_value", premium_value, 0.0, PREMIUM_MAX, "[0, 1/2]")?;
        check_closed(
            "deployment_value",
            deployment_value,
            premium_value,
            1.0,
            "[v_p, 1]",
        )?;
        let total_value = deployment_value + premium_value;
        check_closed("total_value", total_value, 0.0, 1.0, "[0, 1]")?;
        let scaling_factor = if total_value > 0.0 {
            (premium_value / total_value).min(PREMIUM_MAX)
        } else {
            0.0
        };
        Ok(Self {
            total_value,
            scaling_factor,
            deployment_value: total_value - premium_value,
            premium_value,
        })
    }

    /// Deterministic transform of two uniforms: `u_value` through the family
    /// quantile, `u_split` scaled onto `[0, 1/2]`.
    pub fn from_uniforms(family: ValueFamily, u_value: f64, u_split: f64) -> Result<Self> {
        Self::new(family.quantile(u_value), 0.5 * u_split)
    }
}

/// Draws `V` from the family (untruncated population) and `λ ~ U[0, 1/2]`.
/// Consumes exactly two uniforms from `rng`.
pub fn sample_agent_valuation<R: Rng + ?Sized>(family: ValueFamily, rng: &mut R) -> AgentValuation {
    let u_value: f64 = rng.gen();
    let u_split: f64 = rng.gen();
    AgentValuation::from_uniforms(family, u_value, u_split)
        .expect("uniform draws always map into the valuation domain")
}

/// Draws one premium value `v_p = Vλ` with `V` conditioned on `[p_eps, 1]`.
pub fn sample_truncated_premium<R: Rng + ?Sized>(
    family: ValueFamily,
    p_eps: f64,
    rng: &mut R,
) -> f64 {
    let u_value: f64 = rng.gen();
    let u_split: f64 = rng.gen();
    family.truncated_quantile(p_eps, u_value) * 0.5 * u_split
}

/// Which side of the `p_eps / 2` breakpoint a closed form belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Lower,
    Upper,
}

/// Law of `v_p = Vλ` with `V` from `family` conditioned on `[p_eps, 1]` and
/// `λ ~ U[0, 1/2]`. Support is `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PremiumValueDistribution {
    family: ValueFamily,
    p_eps: f64,
    /// `1 - F_V(p_eps)`, the mass of the conditioning event.
    mass: f64,
}

impl PremiumValueDistribution {
    pub fn new(family: ValueFamily, p_eps: f64) -> Result<Self> {
        validate_p_eps(p_eps)?;
        let mass = family.survival(p_eps);
        if mass <= 0.0 {
            return Err(Error::Numerical(format!(
                "conditioning mass 1 - F(p_eps) = {mass} is not positive"
            )));
        }
        Ok(Self {
            family,
            p_eps,
            mass,
        })
    }

    pub fn family(&self) -> ValueFamily {
        self.family
    }

    pub fn p_eps(&self) -> f64 {
        self.p_eps
    }

    pub fn breakpoint(&self) -> f64 {
        0.5 * self.p_eps
    }

    pub fn branch_of(&self, y: f64) -> Branch {
        if y <= self.breakpoint() {
            Branch::Lower
        } else {
            Branch::Upper
        }
    }

    fn check(y: f64) -> Result<f64> {
        check_closed("y", y, 0.0, PREMIUM_MAX, "[0, 1/2]")
    }

    pub fn pdf(&self, y: f64) -> Result<f64> {
        Self::check(y)?;
        clamp_density(self.pdf_on(self.branch_of(y), y))
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        Self::check(y)?;
        clamp_probability(self.cdf_on(self.branch_of(y), y))
    }

    /// `∫₀^y F(z) dz`.
    pub fn cdf_integral(&self, y: f64) -> Result<f64> {
        Self::check(y)?;
        Ok(self.cdf_integral_on(self.branch_of(y), y))
    }

    /// The density's closed form for `branch`, evaluated without regard to
    /// which side of the breakpoint `y` lies on.
    pub fn pdf_on(&self, branch: Branch, y: f64) -> f64 {
        let p = self.p_eps;
        match (self.family, branch) {
            (ValueFamily::Uniform01, Branch::Lower) => 2.0 * p.ln() / (p - 1.0),
            (ValueFamily::Uniform01, Branch::Upper) => 2.0 * (2.0 * y).ln() / (p - 1.0),
            (ValueFamily::Beta22, Branch::Lower) => 6.0 * (p * p - 2.0 * p + 1.0) / self.mass,
            (ValueFamily::Beta22, Branch::Upper) => 6.0 * (4.0 * y * y - 4.0 * y + 1.0) / self.mass,
        }
    }

    pub fn cdf_on(&self, branch: Branch, y: f64) -> f64 {
        let p = self.p_eps;
        match (self.family, branch) {
            (ValueFamily::Uniform01, Branch::Lower) => 2.0 * y * p.ln() / (p - 1.0),
            (ValueFamily::Uniform01, Branch::Upper) => {
                (2.0 * y * ((2.0 * y).ln() - 1.0) + p) / (p - 1.0)
            }
            (ValueFamily::Beta22, Branch::Lower) => 6.0 * y * (p * p - 2.0 * p + 1.0) / self.mass,
            (ValueFamily::Beta22, Branch::Upper) => {
                (2.0 * y * (4.0 * y * y - 6.0 * y + 3.0) + p * p * (2.0 * p - 3.0)) / self.mass
            }
        }
    }

    pub fn cdf_integral_on(&self, branch: Branch, y: f64) -> f64 {
        let p = self.p_eps;
        match (self.family, branch) {
            (ValueFamily::Uniform01, Branch::Lower) => y * y * p.ln() / (p - 1.0),
            (ValueFamily::Uniform01, Branch::Upper) => {
                (4.0 * y * y * (2.0 * (2.0 * y).ln() - 3.0) + 8.0 * y * p - p * p)
                    / (8.0 * (p - 1.0))
            }
            (ValueFamily::Beta22, Branch::Lower) => {
                3.0 * y * y * (p * p - 2.0 * p + 1.0) / self.mass
            }
            (ValueFamily::Beta22, Branch::Upper) => {
                (8.0 * y * (2.0 * y * y * y - 4.0 * y * y + 3.0 * y + p * p * (2.0 * p - 3.0))
                    + p * p * p * (4.0 - 3.0 * p))
                    / (8.0 * self.mass)
            }
        }
    }
}

fn clamp_density(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -CLAMP_SLACK {
        Ok(0.0)
    } else {
        Err(Error::Consistency(format!("negative density {v:e}")))
    }
}

fn clamp_probability(v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else if (-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&v) {
        Ok(v.clamp(0.0, 1.0))
    } else {
        Err(Error::Consistency(format!(
            "probability {v:e} outside [0, 1]"
        )))
    }
}

/// One equal-width bin on `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub center: f64,
    /// `count / (N * width)`.
    pub density: f64,
    /// Fraction of samples at or below the bin's right edge.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub width: f64,
    pub samples: usize,
    pub rows: Vec<HistogramRow>,
}

impl Histogram {
    pub fn right_edge(&self, bin: usize) -> f64 {
        (bin + 1) as f64 * self.width
    }
}

/// Equal-width histogram of premium values over `[0, 1/2]`.
pub fn empirical_pdf_cdf(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if bins < 10 {
        return Err(Error::Config(format!("bins = {bins}, need at least 10")));
    }
    let width = PREMIUM_MAX / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        check_closed("sample", x, 0.0, PREMIUM_MAX, "[0, 1/2]")?;
        let k = ((x / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = samples.len() as f64;
    let mut running = 0u64;
    let rows = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            running += c;
            HistogramRow {
                center: (k as f64 + 0.5) * width,
                density: c as f64 / (n * width),
                cumulative: running as f64 / n,
            }
        })
        .collect();
    Ok(Histogram {
        width,
        samples: samples.len(),
        rows,
    })
}

/// Kolmogorov-Smirnov distance between the empirical law of `sorted` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = sorted.len() as f64;
    let mut sup = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        sup = sup.max((f - below).abs()).max((above - f).abs());
    }
    Ok(sup)
}
