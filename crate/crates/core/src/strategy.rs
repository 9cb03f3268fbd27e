//! Equilibrium bids, predicted utilities and participation decisions.
//!
//! Under reserve thresholding the best bid is the threshold price itself.
//! Under SIRA the symmetric equilibrium bid for premium value `v` is
//!
//! ```text
//! b(v) = p_eps + v·F(v) - ∫₀^v F(z) dz
//! ```
//!
//! where `F` is the CDF of the premium value. [`sira_bid_generic`] evaluates
//! this for any CDF (numerically when no closed-form integral is available);
//! [`sira_bid_uniform`] and [`sira_bid_beta`] are the closed forms for the two
//! supported value families.

use serde::{Deserialize, Serialize};

use crate::error::{check_closed, Error, Result};
use crate::quadrature::AdaptiveSimpson;
use crate::value_model::{
    beta22_cdf, validate_p_eps, AgentValuation, PremiumValueDistribution, SafetyCostModel,
    ValueFamily, PREMIUM_MAX,
};

/// A CDF on the premium support `[0, 1/2]`.
pub trait PremiumCdf {
    fn cdf(&self, y: f64) -> Result<f64>;

    /// Closed-form `∫₀^y F`, if one is known.
    fn cdf_integral(&self, _y: f64) -> Option<Result<f64>> {
        None
    }

    /// Points where `F` is not smooth; used as quadrature panel boundaries.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl PremiumCdf for PremiumValueDistribution {
    fn cdf(&self, y: f64) -> Result<f64> {
        PremiumValueDistribution::cdf(self, y)
    }

    fn cdf_integral(&self, y: f64) -> Option<Result<f64>> {
        Some(PremiumValueDistribution::cdf_integral(self, y))
    }

    fn kinks(&self) -> Vec<f64> {
        vec![self.breakpoint()]
    }
}

/// Hides any closed-form integral so that callers are forced onto quadrature.
pub struct NumericIntegral<'a, C: ?Sized>(pub &'a C);

impl<C: PremiumCdf + ?Sized> PremiumCdf for NumericIntegral<'_, C> {
    fn cdf(&self, y: f64) -> Result<f64> {
        self.0.cdf(y)
    }

    fn kinks(&self) -> Vec<f64> {
        self.0.kinks()
    }
}

/// An agent's optimal play under one mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidDecision {
    /// Bid before the cap at 1.
    pub raw_bid: f64,
    pub bid: f64,
    pub predicted_utility: f64,
    /// `predicted_utility > 0`, strictly.
    pub participates: bool,
    /// `M⁻¹(bid)` when participating, 0 (no submission) otherwise.
    pub safety: f64,
}

impl BidDecision {
    fn new(raw_bid: f64, predicted_utility: f64, model: &SafetyCostModel) -> Result<Self> {
        let bid = cap_bid(raw_bid);
        let participates = predicted_utility > 0.0;
        let safety = if participates {
            model.safety_from_bid(bid)?
        } else {
            0.0
        };
        Ok(Self {
            raw_bid,
            bid,
            predicted_utility,
            participates,
            safety,
        })
    }
}

fn check_premium(v_p: f64) -> Result<f64> {
    check_closed("v_p", v_p, 0.0, PREMIUM_MAX, "[0, 1/2]")
}

/// Reserve-thresholding play: bid exactly `p_eps`, participate iff `v_d > p_eps`.
pub fn reserve_threshold_bid(v_d: f64, p_eps: f64, model: &SafetyCostModel) -> Result<BidDecision> {
    check_closed("v_d", v_d, 0.0, 1.0, "[0, 1]")?;
    validate_p_eps(p_eps)?;
    BidDecision::new(p_eps, v_d - p_eps, model)
}

/// `p_eps + v·F(v) - ∫₀^v F` for an arbitrary premium CDF.
///
/// The integral is taken from `cdf` when it has a closed form, otherwise by
/// adaptive Simpson at absolute tolerance 1e-10 with the CDF's kinks as panel
/// boundaries.
pub fn sira_bid_generic<C: PremiumCdf + ?Sized>(cdf: &C, v_p: f64, p_eps: f64) -> Result<f64> {
    check_premium(v_p)?;
    validate_p_eps(p_eps)?;
    if v_p == 0.0 {
        return Ok(p_eps);
    }
    let f_v = cdf.cdf(v_p)?;
    let integral = match cdf.cdf_integral(v_p) {
        Some(closed) => closed?,
        None => {
            let kinks = cdf.kinks();
            AdaptiveSimpson::default().integrate_with_breaks(
                |z| cdf.cdf(z).unwrap_or(f64::NAN),
                0.0,
                v_p,
                &kinks,
            )?
        }
    };
    Ok(p_eps + v_p * f_v - integral)
}

/// Closed-form equilibrium bid for uniform total values.
pub fn sira_bid_uniform(v_p: f64, p_eps: f64) -> Result<f64> {
    check_premium(v_p)?;
    validate_p_eps(p_eps)?;
    let (v, p) = (v_p, p_eps);
    Ok(if v <= 0.5 * p {
        p + v * v * p.ln() / (p - 1.0)
    } else {
        p + (8.0 * v * v * ((2.0 * v).ln() - 0.5) + p * p) / (8.0 * (p - 1.0))
    })
}

/// Closed-form equilibrium bid for Beta(2, 2) total values.
pub fn sira_bid_beta(v_p: f64, p_eps: f64) -> Result<f64> {
    check_premium(v_p)?;
    validate_p_eps(p_eps)?;
    let (v, p) = (v_p, p_eps);
    let mass = 1.0 - beta22_cdf(p);
    if mass <= 0.0 {
        return Err(Error::Numerical(format!(
            "1 - F_beta(p_eps) = {mass} is not positive"
        )));
    }
    Ok(if v <= 0.5 * p {
        p + 3.0 * v * v * (p * p - 2.0 * p + 1.0) / mass
    } else {
        p + (8.0 * v * v * (6.0 * v * v - 8.0 * v + 3.0) + p * p * p * (3.0 * p - 4.0))
            / (8.0 * mass)
    })
}

/// Closed-form bid for `family`.
pub fn sira_bid(family: ValueFamily, v_p: f64, p_eps: f64) -> Result<f64> {
    match family {
        ValueFamily::Uniform01 => sira_bid_uniform(v_p, p_eps),
        ValueFamily::Beta22 => sira_bid_beta(v_p, p_eps),
    }
}

pub fn cap_bid(raw: f64) -> f64 {
    raw.min(1.0)
}

/// Expected SIRA utility of bidding `bid` with values `(v_d, v_p)` when
/// everyone else plays the equilibrium: `v_d + v_p·F(v_p) - bid`.
///
/// A bid at the cap of 1 cannot be outbid, so it wins outright and the
/// utility is `v_d + v_p - 1`.
pub fn equilibrium_utility<C: PremiumCdf + ?Sized>(
    v_d: f64,
    v_p: f64,
    bid: f64,
    cdf: &C,
) -> Result<f64> {
    check_premium(v_p)?;
    check_closed("v_d", v_d, 0.0, 1.0, "[0, 1]")?;
    check_closed("bid", bid, 0.0, 1.0, "[0, 1]")?;
    if bid >= 1.0 {
        return Ok(v_d + v_p - 1.0);
    }
    Ok(v_d + v_p * cdf.cdf(v_p)? - bid)
}

/// SIRA decision for one agent: closed-form bid, cap, predicted utility,
/// participation and resulting safety.
pub fn decide(
    valuation: &AgentValuation,
    p_eps: f64,
    family: ValueFamily,
    model: &SafetyCostModel,
) -> Result<BidDecision> {
    let dist = PremiumValueDistribution::new(family, p_eps)?;
    decide_with(valuation, &dist, model)
}

/// [`decide`] against a prebuilt premium law; avoids rebuilding it per agent.
pub fn decide_with(
    valuation: &AgentValuation,
    dist: &PremiumValueDistribution,
    model: &SafetyCostModel,
) -> Result<BidDecision> {
    let v_p = valuation.premium_value;
    let raw = sira_bid(dist.family(), v_p, dist.p_eps())?;
    let utility = equilibrium_utility(valuation.deployment_value, v_p, cap_bid(raw), dist)?;
    BidDecision::new(raw, utility, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P_GRID: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
    const FAMILIES: [ValueFamily; 2] = [ValueFamily::Uniform01, ValueFamily::Beta22];

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Utility of bidding `b` under reserve thresholding.
    fn reserve_utility(v_d: f64, p: f64, b: f64) -> f64 {
        if b >= p {
            v_d - b
        } else {
            -b
        }
    }

    /// Brute-force best response over `b ∈ {0, 1e-4, ..., 1}`.
    fn grid_best_response(v_d: f64, p: f64) -> (f64, f64) {
        (0..=10_000)
            .map(|k| k as f64 * 1e-4)
            .map(|b| (b, reserve_utility(v_d, p, b)))
            .fold((0.0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }

    #[test]
    fn reserve_examples() {
        let m = SafetyCostModel::default();
        let d = reserve_threshold_bid(0.7, 0.3, &m).unwrap();
        assert_eq!(d.bid, 0.3);
        assert!(close(d.predicted_utility, 0.4, 1e-15));
        assert!(d.participates);
        assert_eq!(d.safety, 0.3);
        let (b, u) = grid_best_response(0.7, 0.3);
        assert!(close(b, 0.3, 1e-4) && close(u, 0.4, 1e-4));

        let d = reserve_threshold_bid(0.3, 0.3, &m).unwrap();
        assert_eq!(d.predicted_utility, 0.0);
        assert!(!d.participates);
        assert_eq!(d.safety, 0.0);

        assert!(!reserve_threshold_bid(0.1, 0.5, &m).unwrap().participates);
    }

    #[test]
    fn reserve_safety_is_epsilon() {
        let m = SafetyCostModel::new(2.0).unwrap();
        let eps = 0.8;
        let p = m.price_of_safety(eps).unwrap();
        let d = reserve_threshold_bid(0.9, p, &m).unwrap();
        assert!(close(d.safety, eps, 1e-15));
    }

    #[test]
    fn reserve_domain_errors() {
        let m = SafetyCostModel::default();
        assert!(reserve_threshold_bid(1.5, 0.3, &m).is_err());
        assert!(reserve_threshold_bid(0.5, 0.0, &m).is_err());
        assert!(reserve_threshold_bid(0.5, 1.0, &m).is_err());
    }

    #[test]
    fn generic_bid_examples() {
        let u = PremiumValueDistribution::new(ValueFamily::Uniform01, 0.5).unwrap();
        let b = PremiumValueDistribution::new(ValueFamily::Beta22, 0.5).unwrap();
        let u4 = PremiumValueDistribution::new(ValueFamily::Uniform01, 0.4).unwrap();
        assert_eq!(
            sira_bid_generic(&NumericIntegral(&u4), 0.0, 0.4).unwrap(),
            0.4
        );
        let g = sira_bid_generic(&NumericIntegral(&u), 0.2, 0.5).unwrap();
        assert!(close(g, 0.5554518, 1e-7), "{g}");
        let g = sira_bid_generic(&NumericIntegral(&b), 0.4, 0.5).unwrap();
        assert!(close(g, 0.665075, 1e-6), "{g}");
    }

    #[test]
    fn uniform_bid_examples() {
        assert!(close(sira_bid_uniform(0.2, 0.5).unwrap(), 0.5554518, 1e-7));
        assert!(close(sira_bid_uniform(0.4, 0.5).unwrap(), 0.668906, 1e-6));
        let p: f64 = 0.5;
        let v: f64 = 0.25;
        let lower = p + v * v * p.ln() / (p - 1.0);
        let upper = p + (8.0 * v * v * ((2.0 * v).ln() - 0.5) + p * p) / (8.0 * (p - 1.0));
        assert!(close(lower, 0.586643, 1e-6) && close(upper, 0.586643, 1e-6));
        assert!(close(lower, upper, 1e-12));
    }

    #[test]
    fn beta_bid_examples() {
        assert!(close(sira_bid_beta(0.2, 0.5).unwrap(), 0.56, 1e-12));
        assert!(close(sira_bid_beta(0.4, 0.5).unwrap(), 0.665075, 1e-6));
        for p in P_GRID {
            assert_eq!(sira_bid_beta(0.0, p).unwrap(), p);
        }
    }

    #[test]
    fn closed_form_branches_are_continuous() {
        for p in P_GRID {
            let v = 0.5 * p;
            let below = v * (1.0 - 1e-15);
            for f in [sira_bid_uniform, sira_bid_beta] {
                assert!(close(f(v, p).unwrap(), f(below, p).unwrap(), 1e-12));
            }
            let mass = 1.0 - beta22_cdf(p);
            let lower = p + 3.0 * v * v * (1.0 - p).powi(2) / mass;
            let upper = p
                + (8.0 * v * v * (6.0 * v * v - 8.0 * v + 3.0) + p.powi(3) * (3.0 * p - 4.0))
                    / (8.0 * mass);
            assert!(close(lower, upper, 1e-12));
        }
    }

    #[test]
    fn closed_forms_agree_with_quadrature() {
        for family in FAMILIES {
            for p in P_GRID {
                let dist = PremiumValueDistribution::new(family, p).unwrap();
                let numeric = NumericIntegral(&dist);
                for i in 0..200 {
                    let v = 0.5 * i as f64 / 199.0;
                    let closed = sira_bid(family, v, p).unwrap();
                    let quad = sira_bid_generic(&numeric, v, p).unwrap();
                    assert!(close(closed, quad, 1e-8), "{family} p={p} v={v}");
                }
            }
        }
    }

    #[test]
    fn bids_strictly_exceed_price_and_are_monotone() {
        for family in FAMILIES {
            for p in P_GRID {
                let mut prev = sira_bid(family, 0.0, p).unwrap();
                assert_eq!(prev, p);
                for i in 1..=1000 {
                    let v = 0.5 * i as f64 / 1000.0;
                    let b = sira_bid(family, v, p).unwrap();
                    assert!(b > p, "{family} p={p} v={v}");
                    assert!(b >= prev);
                    prev = b;
                }
            }
        }
    }

    #[test]
    fn cap_examples() {
        assert_eq!(cap_bid(0.95), 0.95);
        assert_eq!(cap_bid(1.3), 1.0);
        assert_eq!(cap_bid(1.0), 1.0);
    }

    #[test]
    fn utility_examples() {
        let u = PremiumValueDistribution::new(ValueFamily::Uniform01, 0.5).unwrap();
        assert!(close(
            equilibrium_utility(0.6, 0.0, 0.5, &u).unwrap(),
            0.1,
            1e-15
        ));
        let bid = sira_bid_uniform(0.2, 0.5).unwrap();
        let expected = 0.2 + 0.2 * 0.5545177444479562 - 0.5554517744447956;
        let got = equilibrium_utility(0.2, 0.2, bid, &u).unwrap();
        assert!(
            close(got, expected, 1e-12) && close(got, -0.24455, 1e-5),
            "{got}"
        );
        assert!(close(
            equilibrium_utility(0.5, 0.5, 1.0, &u).unwrap(),
            0.0,
            1e-15
        ));
    }

    #[test]
    fn expanded_lower_branch_utility_agrees() {
        // the expanded lower-branch utility reduces to v_d + v_p F(v_p) - b
        for p in P_GRID {
            let dist = PremiumValueDistribution::new(ValueFamily::Uniform01, p).unwrap();
            for i in 0..=20 {
                let v = 0.5 * p * i as f64 / 20.0;
                let b = sira_bid_uniform(v, p).unwrap();
                if b > 1.0 {
                    continue;
                }
                let printed = 2.0 * v * v * p.ln() / (p - 1.0) + 0.3 - b;
                let canonical = equilibrium_utility(0.3, v, b, &dist).unwrap();
                assert!(close(printed, canonical, 1e-14));
            }
        }
    }

    #[test]
    fn decide_examples() {
        let m = SafetyCostModel::default();
        let v = AgentValuation::from_split(0.8, 0.0).unwrap();
        let d = decide(&v, 0.5, ValueFamily::Uniform01, &m).unwrap();
        assert_eq!(d.bid, 0.5);
        assert!(close(d.predicted_utility, 0.3, 1e-15));
        assert!(d.participates);
        assert_eq!(d.safety, 0.5);

        let v = AgentValuation::from_split(0.2, 0.2).unwrap();
        let d = decide(&v, 0.5, ValueFamily::Uniform01, &m).unwrap();
        assert!(close(d.predicted_utility, -0.24455, 1e-5));
        assert!(!d.participates);
        assert_eq!(d.safety, 0.0);

        let v = AgentValuation::from_split(0.6, 0.2).unwrap();
        let d = decide(&v, 0.5, ValueFamily::Uniform01, &m).unwrap();
        assert!(d.participates);
        assert!(close(d.bid, 0.5554518, 1e-7));
        assert!(close(d.predicted_utility, 0.155452, 1e-6));
        assert!(d.safety > 0.5);
    }

    #[test]
    fn decision_invariants() {
        let m = SafetyCostModel::new(1.7).unwrap();
        for family in FAMILIES {
            for p in P_GRID {
                let eps = m.safety(p);
                for i in 0..=40 {
                    for j in 0..=40 {
                        let total = i as f64 / 40.0;
                        let v = AgentValuation::new(total, 0.5 * j as f64 / 40.0).unwrap();
                        let d = decide(&v, p, family, &m).unwrap();
                        assert_eq!(d.participates, d.predicted_utility > 0.0);
                        assert!(d.bid <= 1.0 && d.bid >= p);
                        if d.participates {
                            assert!(close(d.safety, m.safety(d.bid), 1e-15));
                            if d.raw_bid > p {
                                assert!(d.safety > eps);
                            }
                        } else {
                            assert_eq!(d.safety, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn capped_bids_win_outright() {
        // at p = 0.9 the top premium values push the raw bid past 1
        let m = SafetyCostModel::default();
        let v = AgentValuation::from_split(0.5, 0.5).unwrap();
        let d = decide(&v, 0.9, ValueFamily::Uniform01, &m).unwrap();
        assert!(d.raw_bid > 1.0);
        assert_eq!(d.bid, 1.0);
        assert!(close(d.predicted_utility, 0.0, 1e-15));
        assert!(!d.participates);
    }
}
