use proptest::prelude::*;

use sira::mechanism::{realize_utility, settle_sira, AuctionConfig};
use sira::strategy::{cap_bid, decide, equilibrium_utility, reserve_threshold_bid, sira_bid};
use sira::value_model::{AgentValuation, PremiumValueDistribution, SafetyCostModel, ValueFamily};
use sira::BidDecision;

fn family() -> impl Strategy<Value = ValueFamily> {
    prop_oneof![Just(ValueFamily::Uniform01), Just(ValueFamily::Beta22)]
}

proptest! {
    #[test]
    fn cdf_is_monotone_and_bounded(f in family(), p in 0.01f64..0.99, a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let d = PremiumValueDistribution::new(f, p).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (d.cdf(lo).unwrap(), d.cdf(hi).unwrap());
        prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        prop_assert!(fl <= fh + 1e-15);
        prop_assert!(d.pdf(lo).unwrap() >= 0.0);
    }

    #[test]
    fn sira_bid_exceeds_price_and_increases(f in family(), p in 0.01f64..0.99, a in 1e-6f64..0.5, b in 1e-6f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let bl = sira_bid(f, lo, p).unwrap();
        let bh = sira_bid(f, hi, p).unwrap();
        prop_assert!(bl > p);
        prop_assert!(bl <= bh + 1e-15);
    }

    #[test]
    fn sira_participation_contains_reserve(f in family(), p in 0.01f64..0.99, v in 0.0f64..1.0, lambda in 0.0f64..0.5) {
        let m = SafetyCostModel::default();
        let val = AgentValuation::new(v, lambda).unwrap();
        let r = reserve_threshold_bid(val.deployment_value, p, &m).unwrap();
        let s = decide(&val, p, f, &m).unwrap();
        prop_assert!(!r.participates || s.participates);
        prop_assert!(s.predicted_utility >= r.predicted_utility - 1e-12);
    }

    #[test]
    fn decision_is_internally_consistent(f in family(), p in 0.01f64..0.99, v in 0.0f64..1.0, lambda in 0.0f64..0.5, gamma in 0.2f64..5.0) {
        let m = SafetyCostModel::new(gamma).unwrap();
        let val = AgentValuation::new(v, lambda).unwrap();
        let d = decide(&val, p, f, &m).unwrap();
        prop_assert_eq!(d.bid, cap_bid(d.raw_bid));
        prop_assert_eq!(d.participates, d.predicted_utility > 0.0);
        if d.participates {
            prop_assert!(d.bid >= p);
            prop_assert!((m.cost(d.safety) - d.bid).abs() < 1e-12);
        } else {
            prop_assert_eq!(d.safety, 0.0);
        }
        let dist = PremiumValueDistribution::new(f, p).unwrap();
        let u = equilibrium_utility(val.deployment_value, val.premium_value, d.bid, &dist).unwrap();
        prop_assert_eq!(u, d.predicted_utility);
    }

    #[test]
    fn realized_utility_budget_identity(bid in 0.0f64..1.0, accepted: bool, won: bool, v_p in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let v_d = v_p + extra;
        match realize_utility(bid, accepted, won, v_d, v_p) {
            Err(_) => prop_assert!(won && !accepted),
            Ok(u) => {
                let gross = u + bid;
                let expected = match (accepted, won) {
                    (false, _) => 0.0,
                    (true, false) => v_d,
                    (true, true) => v_d + v_p,
                };
                prop_assert!((gross - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn settlement_respects_threshold(bids in prop::collection::vec(0.0f64..1.0, 2..40), p in 0.05f64..0.95, rounds in 1u32..4, seed: u64) {
        let mut config = AuctionConfig::new(bids.len(), p, ValueFamily::Uniform01, seed);
        config.rounds = rounds;
        let valuations = vec![AgentValuation::from_split(0.6, 0.3).unwrap(); bids.len()];
        let decisions: Vec<BidDecision> = bids
            .iter()
            .map(|&b| BidDecision { raw_bid: b, bid: b, predicted_utility: 1.0, participates: true, safety: b })
            .collect();
        let r = settle_sira(&config, &valuations, &decisions).unwrap();
        let top = bids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let top_count = bids.iter().filter(|&&b| b == top).count();
        for (o, &b) in r.outcomes.iter().zip(&bids) {
            prop_assert_eq!(o.accepted, b >= p);
            prop_assert!(!o.won_premium || o.accepted);
            if o.accepted && b == top && top_count == 1 && bids.iter().filter(|&&x| x >= p).count() > 1 {
                prop_assert!(o.won_premium);
            }
            let deployments = if rounds > 1 {
                o.history.iter().filter(|h| h.deployment_value != 0.0).count()
            } else {
                usize::from(o.accepted)
            };
            prop_assert!(deployments <= 1);
        }
    }
}
