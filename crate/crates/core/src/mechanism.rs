//! Auction engines.
//!
//! Both engines follow the same pipeline: sample valuations, let every agent
//! pick its optimal bid, keep the agents whose predicted utility is positive,
//! accept submissions that reach the threshold price and realize utilities.
//! SIRA additionally compares each accepted model against another accepted
//! model and pays the premium to the safer one; spend is sunk either way.
//!
//! Randomness is addressed through [`crate::rng`] paths keyed by agent index
//! and round, so results do not depend on the rayon worker count.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::compensated_sum;
use crate::rng::{self, domain};
use crate::strategy::{decide_with, reserve_threshold_bid, BidDecision};
use crate::value_model::{
    sample_agent_valuation, validate_p_eps, AgentValuation, PremiumValueDistribution,
    SafetyCostModel, ValueFamily,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Each accepted agent faces one opponent drawn uniformly from the other
    /// accepted agents, independently across agents.
    IndependentOpponent,
    /// Accepted agents are split into random disjoint pairs; an odd agent out
    /// faces a uniformly drawn opponent.
    PerfectMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    FairCoin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub n_agents: usize,
    pub p_eps: f64,
    pub family: ValueFamily,
    pub gamma: f64,
    pub pairing_mode: PairingMode,
    pub tie_rule: TieRule,
    pub seed: u64,
    pub rounds: u32,
}

impl AuctionConfig {
    pub fn new(n_agents: usize, p_eps: f64, family: ValueFamily, seed: u64) -> Self {
        Self {
            n_agents,
            p_eps,
            family,
            gamma: 1.0,
            pairing_mode: PairingMode::IndependentOpponent,
            tie_rule: TieRule::FairCoin,
            seed,
            rounds: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config(format!(
                "n_agents = {}, need at least 2",
                self.n_agents
            )));
        }
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        validate_p_eps(self.p_eps)?;
        SafetyCostModel::new(self.gamma)?;
        Ok(())
    }

    pub fn cost_model(&self) -> Result<SafetyCostModel> {
        SafetyCostModel::new(self.gamma)
    }

    /// Safety threshold implied by the price, `M⁻¹(p_eps)`.
    pub fn epsilon(&self) -> Result<f64> {
        Ok(self.cost_model()?.safety(self.p_eps))
    }
}

/// One round of a (possibly repeated) auction from one agent's view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub accepted: bool,
    pub won_premium: bool,
    /// Deployment value received this round; nonzero at most once.
    pub deployment_value: f64,
    /// Premium received this round.
    pub premium_value: f64,
    pub incremental_cost: f64,
    pub cumulative_value: f64,
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub index: usize,
    pub valuation: AgentValuation,
    pub decision: BidDecision,
    /// The agent built and submitted a model (spent its bid).
    pub submitted: bool,
    /// Submitted with a bid of at least `p_eps`.
    pub accepted: bool,
    /// Won at least one premium comparison.
    pub won_premium: bool,
    pub realized_utility: f64,
    /// Per-round record; filled only for runs with more than one round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<RoundOutcome>,
}

impl AgentOutcome {
    pub fn spend(&self) -> f64 {
        if self.submitted {
            self.decision.bid
        } else {
            0.0
        }
    }

    /// Total value realized, `realized_utility + spend`.
    pub fn gross_value(&self) -> f64 {
        self.realized_utility + self.spend()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub participants: usize,
    pub participation_rate: f64,
    /// Mean bid over participants; 0 when nobody participates.
    pub mean_bid: f64,
    pub mean_realized_utility: f64,
    /// Premium comparisons won, summed over agents and rounds.
    pub premium_award_count: usize,
}

impl Aggregates {
    pub fn from_outcomes(outcomes: &[AgentOutcome]) -> Self {
        let n = outcomes.len();
        let participants = outcomes.iter().filter(|o| o.decision.participates).count();
        let bid_sum = compensated_sum(
            outcomes
                .iter()
                .filter(|o| o.decision.participates)
                .map(|o| o.decision.bid),
        );
        let utility_sum = compensated_sum(outcomes.iter().map(|o| o.realized_utility));
        let awards = outcomes
            .iter()
            .map(|o| {
                if o.history.is_empty() {
                    usize::from(o.won_premium)
                } else {
                    o.history.iter().filter(|r| r.won_premium).count()
                }
            })
            .sum();
        Self {
            participants,
            participation_rate: if n == 0 {
                0.0
            } else {
                participants as f64 / n as f64
            },
            mean_bid: if participants == 0 {
                0.0
            } else {
                bid_sum / participants as f64
            },
            mean_realized_utility: if n == 0 { 0.0 } else { utility_sum / n as f64 },
            premium_award_count: awards,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionReport {
    pub config: AuctionConfig,
    pub seed: u64,
    pub rounds_played: u32,
    pub aggregates: Aggregates,
    pub outcomes: Vec<AgentOutcome>,
}

/// Strict comparison; an exact tie is settled by a fair coin from `rng`.
pub fn compare_pair<R: Rng + ?Sized>(
    bid_i: f64,
    bid_j: f64,
    tie_rule: TieRule,
    rng: &mut R,
) -> bool {
    if bid_i > bid_j {
        true
    } else if bid_i < bid_j {
        false
    } else {
        match tie_rule {
            TieRule::FairCoin => rng.gen::<bool>(),
        }
    }
}

/// Single-shot SIRA utility: `-b` if rejected, `v_d - b` if accepted and
/// outbid, `v_d + v_p - b` if accepted and winning.
pub fn realize_utility(bid: f64, accepted: bool, won: bool, v_d: f64, v_p: f64) -> Result<f64> {
    if won && !accepted {
        return Err(Error::Consistency(
            "a rejected submission cannot win the premium".into(),
        ));
    }
    let gross = match (accepted, won) {
        (false, _) => 0.0,
        (true, false) => v_d,
        (true, true) => v_d + v_p,
    };
    Ok(gross - bid)
}

/// Population valuations; agent `i` draws from stream `(seed, VALUATION, i)`.
pub fn sample_population(family: ValueFamily, n_agents: usize, seed: u64) -> Vec<AgentValuation> {
    (0..n_agents)
        .into_par_iter()
        .map(|i| {
            let mut s = rng::stream(seed, &[domain::VALUATION, i as u64]);
            sample_agent_valuation(family, &mut s)
        })
        .collect()
}

pub fn run_reserve_threshold(config: &AuctionConfig) -> Result<AuctionReport> {
    config.validate()?;
    let valuations = sample_population(config.family, config.n_agents, config.seed);
    run_reserve_threshold_on(config, &valuations)
}

/// Reserve thresholding over given valuations.
pub fn run_reserve_threshold_on(
    config: &AuctionConfig,
    valuations: &[AgentValuation],
) -> Result<AuctionReport> {
    validate_p_eps(config.p_eps)?;
    let model = config.cost_model()?;
    let decisions = valuations
        .par_iter()
        .map(|v| reserve_threshold_bid(v.deployment_value, config.p_eps, &model))
        .collect::<Result<Vec<_>>>()?;
    settle(config, valuations, &decisions, 1, false)
}

pub fn run_sira(config: &AuctionConfig) -> Result<AuctionReport> {
    config.validate()?;
    let valuations = sample_population(config.family, config.n_agents, config.seed);
    run_sira_on(config, &valuations)
}

/// Single-shot SIRA over given valuations.
pub fn run_sira_on(config: &AuctionConfig, valuations: &[AgentValuation]) -> Result<AuctionReport> {
    let decisions = sira_decisions(config, valuations)?;
    settle(config, valuations, &decisions, 1, true)
}

/// Repeated SIRA with `config.rounds` rounds. Values and bids are fixed per
/// agent; deployment value is paid once, premiums on every win.
pub fn run_repeated_sira(config: &AuctionConfig) -> Result<AuctionReport> {
    config.validate()?;
    let valuations = sample_population(config.family, config.n_agents, config.seed);
    let decisions = sira_decisions(config, &valuations)?;
    settle(config, &valuations, &decisions, config.rounds, true)
}

/// SIRA settlement with caller-supplied decisions, over `config.rounds`
/// rounds. Lets callers force off-equilibrium bids.
pub fn settle_sira(
    config: &AuctionConfig,
    valuations: &[AgentValuation],
    decisions: &[BidDecision],
) -> Result<AuctionReport> {
    if config.rounds < 1 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    settle(config, valuations, decisions, config.rounds, true)
}

fn sira_decisions(
    config: &AuctionConfig,
    valuations: &[AgentValuation],
) -> Result<Vec<BidDecision>> {
    let dist = PremiumValueDistribution::new(config.family, config.p_eps)?;
    let model = config.cost_model()?;
    valuations
        .par_iter()
        .map(|v| decide_with(v, &dist, &model))
        .collect()
}

fn settle(
    config: &AuctionConfig,
    valuations: &[AgentValuation],
    decisions: &[BidDecision],
    rounds: u32,
    compare: bool,
) -> Result<AuctionReport> {
    if valuations.len() != decisions.len() {
        return Err(Error::Consistency(format!(
            "{} valuations but {} decisions",
            valuations.len(),
            decisions.len()
        )));
    }
    let p_eps = config.p_eps;
    let accepted: Vec<usize> = decisions
        .iter()
        .enumerate()
        .filter(|(_, d)| d.participates && d.bid >= p_eps)
        .map(|(i, _)| i)
        .collect();
    let bids: Vec<f64> = accepted.iter().map(|&i| decisions[i].bid).collect();

    // per-agent win flags per round, indexed by agent
    let mut wins_by_round: Vec<Vec<bool>> = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        let mut flags = vec![false; valuations.len()];
        if compare {
            let won = pair_round(config, &accepted, &bids, round);
            for (&i, w) in accepted.iter().zip(won) {
                flags[i] = w;
            }
        }
        wins_by_round.push(flags);
    }

    let record_history = rounds > 1;
    let outcomes = valuations
        .iter()
        .zip(decisions)
        .enumerate()
        .map(|(index, (valuation, decision))| {
            let submitted = decision.participates;
            let is_accepted = submitted && decision.bid >= p_eps;
            let bid = if submitted { decision.bid } else { 0.0 };
            let (v_d, v_p) = (valuation.deployment_value, valuation.premium_value);

            let mut deployed = false;
            let mut won_any = false;
            let mut cumulative_value = 0.0;
            let mut cumulative_cost = 0.0_f64;
            let mut history = Vec::new();
            for (round, flags) in wins_by_round.iter().enumerate() {
                let won = flags[index];
                // bids are constant across rounds, so only the first round costs
                let incremental_cost = (bid - cumulative_cost).max(0.0);
                cumulative_cost += incremental_cost;
                let deployment_value = if is_accepted && !deployed {
                    deployed = true;
                    v_d
                } else {
                    0.0
                };
                let premium_value = if won { v_p } else { 0.0 };
                cumulative_value += deployment_value + premium_value;
                won_any |= won;
                if record_history {
                    history.push(RoundOutcome {
                        round: round as u32 + 1,
                        accepted: is_accepted,
                        won_premium: won,
                        deployment_value,
                        premium_value,
                        incremental_cost,
                        cumulative_value,
                        cumulative_cost,
                    });
                }
            }
            AgentOutcome {
                index,
                valuation: *valuation,
                decision: *decision,
                submitted,
                accepted: is_accepted,
                won_premium: won_any,
                realized_utility: cumulative_value - cumulative_cost,
                history,
            }
        })
        .collect::<Vec<_>>();

    let aggregates = Aggregates::from_outcomes(&outcomes);
    Ok(AuctionReport {
        config: config.clone(),
        seed: config.seed,
        rounds_played: rounds,
        aggregates,
        outcomes,
    })
}

/// Win flags for the accepted agents (positionally aligned with `accepted`).
fn pair_round(config: &AuctionConfig, accepted: &[usize], bids: &[f64], round: u32) -> Vec<bool> {
    let m = accepted.len();
    if m < 2 {
        return vec![false; m];
    }
    let seed = config.seed;
    let round = u64::from(round);
    let against_random = |k: usize| {
        let mut s = rng::stream(seed, &[domain::PAIRING, round, accepted[k] as u64]);
        let mut j = s.gen_range(0..m - 1);
        if j >= k {
            j += 1;
        }
        compare_pair(bids[k], bids[j], config.tie_rule, &mut s)
    };
    match config.pairing_mode {
        PairingMode::IndependentOpponent => (0..m).into_par_iter().map(against_random).collect(),
        PairingMode::PerfectMatching => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng::stream(seed, &[domain::MATCHING, round]));
            let mut won = vec![false; m];
            for (t, pair) in order.chunks(2).enumerate() {
                match *pair {
                    [a, b] => {
                        let mut s = rng::stream(seed, &[domain::PAIR_TIE, round, t as u64]);
                        let a_wins = compare_pair(bids[a], bids[b], config.tie_rule, &mut s);
                        won[a] = a_wins;
                        won[b] = !a_wins;
                    }
                    [odd] => won[odd] = against_random(odd),
                    _ => unreachable!(),
                }
            }
            won
        }
    }
}
