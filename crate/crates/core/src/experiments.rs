//! Empirical studies built on the engines: best-response deviation curves,
//! participation and bid sweeps over the threshold price, Monte Carlo
//! validation of the premium law and a closed-form/quadrature cross-check.
//!
//! Every estimate carries a standard error. Randomness is addressed by
//! `(seed, purpose, index)` paths so results are schedule independent.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{
    compare_pair, run_reserve_threshold_on, run_sira, run_sira_on, sample_population,
    AuctionConfig, AuctionReport, TieRule,
};
use crate::quadrature::compensated_sum;
use crate::rng::{self, domain};
use crate::strategy::{
    cap_bid, decide_with, equilibrium_utility, sira_bid, sira_bid_generic, NumericIntegral,
};
use crate::value_model::{
    empirical_pdf_cdf, ks_distance, sample_agent_valuation, sample_truncated_premium,
    validate_p_eps, AgentValuation, PremiumValueDistribution, SafetyCostModel, ValueFamily,
    PREMIUM_MAX,
};

pub const MIN_OPPONENTS: usize = 1_000;
pub const MIN_SWEEP_AGENTS: usize = 10_000;
pub const MIN_DISTRIBUTION_SAMPLES: usize = 100_000;

/// Draws allowed per opponent when sampling from the accepted population.
const MAX_REJECTIONS: usize = 1_000_000;
const SAMPLE_CHUNK: usize = 1 << 16;

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let last = (n - 1) as f64;
            (0..n)
                .map(|i| match i {
                    0 => a,
                    i if i == n - 1 => b,
                    _ => snap((a * (last - i as f64) + b * i as f64) / last),
                })
                .collect()
        }
    }
}

/// Rounds to 15 significant digits so decimal grids land on their literals.
fn snap(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap_or(x)
}

/// Mean and standard error of the mean (sample standard deviation).
fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = compensated_sum(values.clone()) / n as f64;
    if n == 1 {
        return (mean, 0.0, 1);
    }
    let ss = compensated_sum(values.map(|x| (x - mean) * (x - mean)));
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt(), n)
}

/// Standard error of a proportion `k / n`.
fn proportion_se(k: usize, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let r = k as f64 / n as f64;
    (r * (1.0 - r) / (n - 1) as f64).sqrt()
}

/// Rises to a single peak and falls, allowing dips of at most `tol`.
pub fn is_unimodal(values: &[f64], tol: f64) -> bool {
    let Some(peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    else {
        return true;
    };
    values[..=peak].windows(2).all(|w| w[1] >= w[0] - tol)
        && values[peak..].windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Population the probe agent is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentPool {
    /// `V` conditioned on `[p_eps, 1]`, `λ ~ U[0, 1/2]`: the population the
    /// equilibrium bid is derived against.
    Truncated,
    /// Agents from the full population who participate and are accepted.
    Accepted,
}

impl fmt::Display for OpponentPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Truncated => "truncated",
            Self::Accepted => "accepted",
        })
    }
}

impl std::str::FromStr for OpponentPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "truncated" => Ok(Self::Truncated),
            "accepted" => Ok(Self::Accepted),
            other => Err(Error::Config(format!(
                "unknown opponent pool '{other}' (expected truncated or accepted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSpec {
    pub family: ValueFamily,
    pub p_eps: f64,
    pub probe: AgentValuation,
    pub n_opponents: usize,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub pool: OpponentPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub delta: f64,
    pub bid: f64,
    pub accepted: bool,
    pub mean_utility: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSweepResult {
    pub family: ValueFamily,
    pub p_eps: f64,
    pub probe: AgentValuation,
    pub pool: OpponentPool,
    pub equilibrium_bid: f64,
    pub predicted_utility: f64,
    /// Index of `δ = 0` in `points`.
    pub optimum_index: usize,
    pub points: Vec<DeviationPoint>,
}

impl DeviationSweepResult {
    pub fn optimum(&self) -> &DeviationPoint {
        &self.points[self.optimum_index]
    }

    pub fn point(&self, delta: f64) -> Option<&DeviationPoint> {
        self.points.iter().find(|p| (p.delta - delta).abs() < 1e-12)
    }

    /// Margin of `δ = 0` over the point at `delta`, in standard errors of
    /// the difference.
    pub fn margin_in_se(&self, delta: f64) -> Option<f64> {
        let opt = self.optimum();
        let other = self.point(delta)?;
        let diff = opt.mean_utility - other.mean_utility;
        let se = opt.std_err.hypot(other.std_err);
        Some(if se == 0.0 {
            if diff > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        } else {
            diff / se
        })
    }
}

fn opponent_bids(spec: &DeviationSpec, dist: &PremiumValueDistribution) -> Result<Vec<f64>> {
    let model = SafetyCostModel::default();
    (0..spec.n_opponents)
        .into_par_iter()
        .map(|j| {
            let mut s = rng::stream(spec.seed, &[domain::OPPONENT, j as u64]);
            match spec.pool {
                OpponentPool::Truncated => {
                    let v_p = sample_truncated_premium(spec.family, spec.p_eps, &mut s);
                    Ok(cap_bid(sira_bid(spec.family, v_p, spec.p_eps)?))
                }
                OpponentPool::Accepted => {
                    for _ in 0..MAX_REJECTIONS {
                        let v = sample_agent_valuation(spec.family, &mut s);
                        let d = decide_with(&v, dist, &model)?;
                        if d.participates && d.bid >= spec.p_eps {
                            return Ok(d.bid);
                        }
                    }
                    Err(Error::Numerical(format!(
                        "no accepted opponent within {MAX_REJECTIONS} draws at p_eps = {}",
                        spec.p_eps
                    )))
                }
            }
        })
        .collect()
}

/// Utility of a single probe agent that scales its equilibrium bid by
/// `1 + δ` while every opponent plays the equilibrium.
pub fn deviation_sweep(spec: &DeviationSpec) -> Result<DeviationSweepResult> {
    validate_p_eps(spec.p_eps)?;
    if spec.n_opponents < MIN_OPPONENTS {
        return Err(Error::Config(format!(
            "n_opponents = {}, need at least {MIN_OPPONENTS}",
            spec.n_opponents
        )));
    }
    let mut deltas = spec.deltas.clone();
    for &d in &deltas {
        if !(-1.0..=1.0).contains(&d) {
            return Err(Error::Domain {
                name: "delta",
                value: d,
                domain: "[-1, 1]",
            });
        }
    }
    if !deltas.contains(&0.0) {
        deltas.push(0.0);
    }
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let dist = PremiumValueDistribution::new(spec.family, spec.p_eps)?;
    let (v_d, v_p) = (spec.probe.deployment_value, spec.probe.premium_value);
    let equilibrium_bid = cap_bid(sira_bid(spec.family, v_p, spec.p_eps)?);
    let predicted_utility = equilibrium_utility(v_d, v_p, equilibrium_bid, &dist)?;
    let opponents = opponent_bids(spec, &dist)?;
    let n = opponents.len();

    let points = deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let bid = ((1.0 + delta) * equilibrium_bid).clamp(0.0, 1.0);
            if bid < spec.p_eps {
                // rejected: the spend is lost against every opponent
                return DeviationPoint {
                    delta,
                    bid,
                    accepted: false,
                    mean_utility: -bid,
                    std_err: 0.0,
                    n_samples: n,
                };
            }
            let wins = opponents
                .par_iter()
                .enumerate()
                .filter(|&(j, &other)| {
                    if bid != other {
                        bid > other
                    } else {
                        let mut s =
                            rng::stream(spec.seed, &[domain::PROBE_TIE, k as u64, j as u64]);
                        compare_pair(bid, other, TieRule::FairCoin, &mut s)
                    }
                })
                .count();
            let rate = wins as f64 / n as f64;
            DeviationPoint {
                delta,
                bid,
                accepted: true,
                mean_utility: v_d + v_p * rate - bid,
                std_err: v_p * proportion_se(wins, n),
                n_samples: n,
            }
        })
        .collect::<Vec<_>>();
    let optimum_index = points.iter().position(|p| p.delta == 0.0).unwrap_or(0);
    Ok(DeviationSweepResult {
        family: spec.family,
        p_eps: spec.p_eps,
        probe: spec.probe,
        pool: spec.pool,
        equilibrium_bid,
        predicted_utility,
        optimum_index,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Reserve,
    Sira,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reserve => "reserve",
            Self::Sira => "sira",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p_eps: f64,
    pub mechanism: Mechanism,
    pub participation_rate: f64,
    pub mean_bid: f64,
    pub se_participation: f64,
    pub se_bid: f64,
    pub participants: usize,
}

/// SIRA minus reserve at one grid point, on common valuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpliftPoint {
    pub p_eps: f64,
    pub participation_uplift: f64,
    /// Standard error of the paired per-agent participation difference.
    pub se_participation_uplift: f64,
    /// `participation_uplift / reserve rate`; 0 when reserve has no entrants.
    pub relative_participation_uplift: f64,
    /// SIRA mean bid minus `p_eps` (the reserve bid).
    pub bid_uplift: f64,
    pub se_bid_uplift: f64,
    pub relative_bid_uplift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub family: ValueFamily,
    pub n_agents: usize,
    /// Two rows per grid point, reserve then SIRA.
    pub points: Vec<SweepPoint>,
    pub uplifts: Vec<UpliftPoint>,
    pub max_relative_participation_uplift: f64,
    pub max_relative_bid_uplift: f64,
}

impl ThresholdSweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.uplifts.iter().map(|u| u.p_eps).collect()
    }

    pub fn rows(&self, mechanism: Mechanism) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(move |p| p.mechanism == mechanism)
    }
}

fn sweep_point(report: &AuctionReport, mechanism: Mechanism) -> SweepPoint {
    let n = report.outcomes.len();
    let a = &report.aggregates;
    let (_, se_bid, _) = mean_se(
        report
            .outcomes
            .iter()
            .filter(|o| o.decision.participates)
            .map(|o| o.decision.bid),
    );
    SweepPoint {
        p_eps: report.config.p_eps,
        mechanism,
        participation_rate: a.participation_rate,
        mean_bid: a.mean_bid,
        se_participation: proportion_se(a.participants, n),
        se_bid,
        participants: a.participants,
    }
}

/// Both mechanisms over a grid of threshold prices. Grid point `g` samples its
/// population from seed `derive_seed(seed, [SWEEP_POINT, g])`, shared by both.
pub fn threshold_sweep(
    family: ValueFamily,
    p_eps_grid: &[f64],
    n_agents: usize,
    gamma: f64,
    seed: u64,
) -> Result<ThresholdSweepResult> {
    if n_agents < MIN_SWEEP_AGENTS {
        return Err(Error::Config(format!(
            "n_agents = {n_agents}, need at least {MIN_SWEEP_AGENTS}"
        )));
    }
    if p_eps_grid.is_empty() {
        return Err(Error::Config("empty p_eps grid".into()));
    }
    for &p in p_eps_grid {
        validate_p_eps(p)?;
    }
    SafetyCostModel::new(gamma)?;

    let mut points = Vec::with_capacity(2 * p_eps_grid.len());
    let mut uplifts = Vec::with_capacity(p_eps_grid.len());
    for (g, &p_eps) in p_eps_grid.iter().enumerate() {
        let point_seed = rng::derive_seed(seed, &[domain::SWEEP_POINT, g as u64]);
        let mut config = AuctionConfig::new(n_agents, p_eps, family, point_seed);
        config.gamma = gamma;
        let valuations = sample_population(family, n_agents, point_seed);
        let reserve = run_reserve_threshold_on(&config, &valuations)?;
        let sira = run_sira_on(&config, &valuations)?;
        let r = sweep_point(&reserve, Mechanism::Reserve);
        let s = sweep_point(&sira, Mechanism::Sira);

        let (participation_uplift, se_participation_uplift, _) =
            mean_se(reserve.outcomes.iter().zip(&sira.outcomes).map(|(a, b)| {
                f64::from(u8::from(b.decision.participates))
                    - f64::from(u8::from(a.decision.participates))
            }));
        let bid_uplift = if s.participants == 0 {
            0.0
        } else {
            s.mean_bid - p_eps
        };
        uplifts.push(UpliftPoint {
            p_eps,
            participation_uplift,
            se_participation_uplift,
            relative_participation_uplift: if r.participation_rate > 0.0 {
                participation_uplift / r.participation_rate
            } else {
                0.0
            },
            bid_uplift,
            se_bid_uplift: s.se_bid,
            relative_bid_uplift: bid_uplift / p_eps,
        });
        points.push(r);
        points.push(s);
    }
    let max_of =
        |f: fn(&UpliftPoint) -> f64| uplifts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok(ThresholdSweepResult {
        family,
        n_agents,
        max_relative_participation_uplift: max_of(|u| u.relative_participation_uplift),
        max_relative_bid_uplift: max_of(|u| u.relative_bid_uplift),
        points,
        uplifts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub center: f64,
    pub density: f64,
    pub pdf: f64,
    /// Empirical CDF at the bin's right edge.
    pub cumulative: f64,
    pub cdf: f64,
    /// Whether the bin enters the PDF sup-error (not adjacent to the kink).
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionCheck {
    pub family: ValueFamily,
    pub p_eps: f64,
    pub n_samples: usize,
    pub bins: usize,
    /// Kolmogorov-Smirnov distance over all samples.
    pub cdf_sup_error: f64,
    /// Largest `|density − pdf(center)|` over interior bins.
    pub pdf_sup_error: f64,
    pub rows: Vec<DistributionRow>,
}

/// Premium values `v_p = Vλ` with `V` conditioned on `[p_eps, 1]`. Chunk `c`
/// of 65536 draws uses stream `(seed, PRODUCT, c)`.
pub fn sample_premium_values(family: ValueFamily, p_eps: f64, n: usize, seed: u64) -> Vec<f64> {
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut s = rng::stream(seed, &[domain::PRODUCT, c as u64]);
            (0..len)
                .map(|_| sample_truncated_premium(family, p_eps, &mut s))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Compares sampled premium values with the closed-form PDF and CDF.
///
/// The two bins nearest the breakpoint `p_eps / 2` are left out of the PDF
/// error since a histogram cannot resolve the kink there.
pub fn validate_product_distribution(
    family: ValueFamily,
    p_eps: f64,
    n_samples: usize,
    bins: usize,
    seed: u64,
) -> Result<DistributionCheck> {
    if n_samples < MIN_DISTRIBUTION_SAMPLES {
        return Err(Error::Config(format!(
            "n_samples = {n_samples}, need at least {MIN_DISTRIBUTION_SAMPLES}"
        )));
    }
    let dist = PremiumValueDistribution::new(family, p_eps)?;
    let mut samples = sample_premium_values(family, p_eps, n_samples, seed);
    let hist = empirical_pdf_cdf(&samples, bins)?;
    samples.par_sort_unstable_by(f64::total_cmp);
    let cdf_sup_error = ks_distance(&samples, |y| {
        dist.cdf(y.clamp(0.0, PREMIUM_MAX)).unwrap_or(f64::NAN)
    })?;

    let kink = dist.breakpoint();
    let rows = hist
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            Ok(DistributionRow {
                center: row.center,
                density: row.density,
                pdf: dist.pdf(row.center)?,
                cumulative: row.cumulative,
                cdf: dist.cdf(hist.right_edge(k).min(PREMIUM_MAX))?,
                interior: (row.center - kink).abs() >= hist.width,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pdf_sup_error = rows
        .iter()
        .filter(|r| r.interior)
        .map(|r| (r.density - r.pdf).abs())
        .fold(0.0, f64::max);
    Ok(DistributionCheck {
        family,
        p_eps,
        n_samples,
        bins,
        cdf_sup_error,
        pdf_sup_error,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckRow {
    pub p_eps: f64,
    pub v_p: f64,
    pub closed_form: f64,
    pub quadrature: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckResult {
    pub family: ValueFamily,
    pub max_abs_diff: f64,
    pub rows: Vec<CrosscheckRow>,
}

/// Uncapped closed-form bids against the generic bid with `∫F` by quadrature.
pub fn closed_form_vs_quadrature(
    family: ValueFamily,
    vp_grid: &[f64],
    p_eps_grid: &[f64],
) -> Result<CrosscheckResult> {
    let mut rows = Vec::with_capacity(vp_grid.len() * p_eps_grid.len());
    for &p_eps in p_eps_grid {
        let dist = PremiumValueDistribution::new(family, p_eps)?;
        let numeric = NumericIntegral(&dist);
        let column = vp_grid
            .par_iter()
            .map(|&v_p| {
                let closed_form = sira_bid(family, v_p, p_eps)?;
                let quadrature = sira_bid_generic(&numeric, v_p, p_eps)?;
                Ok(CrosscheckRow {
                    p_eps,
                    v_p,
                    closed_form,
                    quadrature,
                    abs_diff: (closed_form - quadrature).abs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(column);
    }
    let max_abs_diff = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    Ok(CrosscheckResult {
        family,
        max_abs_diff,
        rows,
    })
}

/// Realized against predicted SIRA utility for participants whose premium
/// value lies in `[center − half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketCheck {
    /// Premium comparisons made in the whole run (one per accepted agent).
    pub pairings: usize,
    pub bucket_agents: usize,
    pub mean_realized: f64,
    /// Standard error of `mean_realized`.
    pub se_realized: f64,
    pub mean_predicted: f64,
    /// Standard error of the mean per-agent difference realized − predicted.
    pub se_paired: f64,
}

impl BucketCheck {
    pub fn gap(&self) -> f64 {
        self.mean_realized - self.mean_predicted
    }

    pub fn z_realized(&self) -> f64 {
        self.gap() / self.se_realized
    }

    pub fn z_paired(&self) -> f64 {
        self.gap() / self.se_paired
    }
}

pub fn utility_bucket_check(
    config: &AuctionConfig,
    center: f64,
    half_width: f64,
) -> Result<BucketCheck> {
    if half_width.is_nan() || half_width <= 0.0 {
        return Err(Error::Config("bucket half width must be positive".into()));
    }
    let report = run_sira(config)?;
    let in_bucket = || {
        report.outcomes.iter().filter(|o| {
            o.decision.participates && (o.valuation.premium_value - center).abs() <= half_width
        })
    };
    let (mean_realized, se_realized, bucket_agents) =
        mean_se(in_bucket().map(|o| o.realized_utility));
    if bucket_agents < 2 {
        return Err(Error::EmptySamples);
    }
    let (mean_predicted, _, _) = mean_se(in_bucket().map(|o| o.decision.predicted_utility));
    let (_, se_paired, _) =
        mean_se(in_bucket().map(|o| o.realized_utility - o.decision.predicted_utility));
    Ok(BucketCheck {
        pairings: report.outcomes.iter().filter(|o| o.accepted).count(),
        bucket_agents,
        mean_realized,
        se_realized,
        mean_predicted,
        se_paired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> AgentValuation {
        AgentValuation::from_split(0.5, 0.25).unwrap()
    }

    fn spec(family: ValueFamily, p_eps: f64, deltas: Vec<f64>) -> DeviationSpec {
        DeviationSpec {
            family,
            p_eps,
            probe: probe(),
            n_opponents: 20_000,
            deltas,
            seed: 4,
            pool: OpponentPool::Truncated,
        }
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.1, 0.9, 17);
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[16], 0.9);
        assert_eq!(g[1], 0.15);
        assert_eq!(g[8], 0.5);
        assert_eq!(linspace(-0.5, 0.5, 21)[8], -0.1);
        assert_eq!(g[4], 0.3);
        assert_eq!(g[9], 0.55);
        assert_eq!(linspace(0.3, 0.7, 1), vec![0.3]);
    }

    #[test]
    fn unimodality() {
        assert!(is_unimodal(&[0.0, 0.1, 0.3, 0.2, 0.0], 0.0));
        assert!(!is_unimodal(&[0.0, 0.3, 0.1, 0.3, 0.0], 0.01));
        assert!(is_unimodal(&[0.0, 0.3, 0.295, 0.1], 0.01));
    }

    #[test]
    fn deviation_inserts_zero_and_sorts() {
        let r = deviation_sweep(&spec(ValueFamily::Uniform01, 0.5, vec![0.25, -0.25])).unwrap();
        let ds: Vec<f64> = r.points.iter().map(|p| p.delta).collect();
        assert_eq!(ds, [-0.25, 0.0, 0.25]);
        assert_eq!(r.optimum().delta, 0.0);
        assert!(r.points.iter().all(|p| p.n_samples == 20_000));
    }

    #[test]
    fn deviation_zero_matches_prediction() {
        for family in [ValueFamily::Uniform01, ValueFamily::Beta22] {
            let r = deviation_sweep(&spec(family, 0.5, vec![0.0])).unwrap();
            let opt = r.optimum();
            let z = (opt.mean_utility - r.predicted_utility) / opt.std_err;
            assert!(z.abs() < 3.0, "{family}: z = {z}");
        }
    }

    #[test]
    fn deviation_rejection_branch_is_exact() {
        let r = deviation_sweep(&spec(ValueFamily::Uniform01, 0.5, vec![-0.5, -0.3])).unwrap();
        for d in [-0.5, -0.3] {
            let p = r.point(d).unwrap();
            assert!(!p.accepted);
            assert_eq!(p.mean_utility, -p.bid);
            assert_eq!(p.std_err, 0.0);
            assert_eq!(p.bid, (1.0 + d) * r.equilibrium_bid);
        }
    }

    #[test]
    fn deviation_overbid_loses() {
        let r = deviation_sweep(&spec(ValueFamily::Uniform01, 0.5, vec![0.25])).unwrap();
        assert!(r.margin_in_se(0.25).unwrap() >= 3.0);
    }

    #[test]
    fn deviation_preconditions() {
        let mut s = spec(ValueFamily::Uniform01, 0.5, vec![1.5]);
        assert!(deviation_sweep(&s).is_err());
        s.deltas = vec![0.1];
        s.n_opponents = 999;
        assert!(matches!(deviation_sweep(&s), Err(Error::Config(_))));
    }

    #[test]
    fn accepted_pool_opponents_clear_threshold() {
        let mut s = spec(ValueFamily::Beta22, 0.5, vec![0.0]);
        s.pool = OpponentPool::Accepted;
        s.n_opponents = 2_000;
        let dist = PremiumValueDistribution::new(s.family, s.p_eps).unwrap();
        let bids = opponent_bids(&s, &dist).unwrap();
        assert!(bids.iter().all(|&b| b > 0.5));
    }

    #[test]
    fn sweep_uses_common_populations() {
        let r = threshold_sweep(ValueFamily::Uniform01, &[0.3, 0.6], 10_000, 1.0, 2).unwrap();
        assert_eq!(r.points.len(), 4);
        assert_eq!(r.grid(), vec![0.3, 0.6]);
        for (u, pair) in r.uplifts.iter().zip(r.points.chunks(2)) {
            let (res, sira) = (&pair[0], &pair[1]);
            assert_eq!(res.mechanism, Mechanism::Reserve);
            assert_eq!(res.mean_bid, u.p_eps);
            assert_eq!(res.se_bid, 0.0);
            assert!(sira.participation_rate >= res.participation_rate);
            assert!(
                (u.participation_uplift - (sira.participation_rate - res.participation_rate)).abs()
                    < 1e-12
            );
            for p in pair {
                assert!((0.0..=1.0).contains(&p.participation_rate));
            }
        }
    }

    #[test]
    fn sweep_preconditions() {
        assert!(threshold_sweep(ValueFamily::Uniform01, &[0.5], 9_999, 1.0, 0).is_err());
        assert!(threshold_sweep(ValueFamily::Uniform01, &[1.0], 10_000, 1.0, 0).is_err());
        assert!(threshold_sweep(ValueFamily::Uniform01, &[], 10_000, 1.0, 0).is_err());
    }

    #[test]
    fn distribution_check_tightens_with_samples() {
        for family in [ValueFamily::Uniform01, ValueFamily::Beta22] {
            let small = validate_product_distribution(family, 0.5, 100_000, 20, 3).unwrap();
            let large = validate_product_distribution(family, 0.5, 1_000_000, 20, 3).unwrap();
            assert!(large.cdf_sup_error < small.cdf_sup_error, "{family}");
            assert!(large.cdf_sup_error < 0.01);
            assert_eq!(large.rows.iter().filter(|r| !r.interior).count(), 2);
        }
        assert!(validate_product_distribution(ValueFamily::Uniform01, 0.5, 99_999, 20, 3).is_err());
    }

    #[test]
    fn premium_sampling_is_chunk_stable() {
        let a = sample_premium_values(ValueFamily::Beta22, 0.3, 70_000, 9);
        let b = sample_premium_values(ValueFamily::Beta22, 0.3, 65_536, 9);
        assert_eq!(&a[..65_536], &b[..]);
    }

    #[test]
    fn crosscheck_zero_column_is_exact() {
        let r = closed_form_vs_quadrature(ValueFamily::Uniform01, &[0.0, 0.1], &[0.5]).unwrap();
        assert_eq!(r.rows[0].abs_diff, 0.0);
        assert_eq!(r.rows[0].closed_form, 0.5);
        assert!(r.max_abs_diff < 1e-8);
    }
}
