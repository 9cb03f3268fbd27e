//! Regulatory auction toolkit.
//!
//! Two mechanisms for clearing AI models for deployment are modelled here:
//!
//! * **Reserve thresholding**: any model whose safety reaches the regulator's
//!   threshold is deployed. Agents spend exactly the price of that safety.
//! * **SIRA** (safety-incentivized regulatory auction): accepted models are
//!   compared pairwise and the safer one earns a premium. Spend is sunk, which
//!   makes this an all-pay auction whose equilibrium bids sit strictly above
//!   the threshold price.
//!
//! The crate is layered bottom-up: [`value_model`] holds valuations and the
//! closed-form law of the premium value, [`strategy`] computes equilibrium
//! bids, [`mechanism`] runs populations through either auction, and
//! [`experiments`] reproduces the equilibrium and participation studies.
//! [`cli`] exposes all of it as the `sira` binary.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod mechanism;
pub mod quadrature;
pub mod rng;
pub mod strategy;
pub mod value_model;

pub use error::{Error, Result};
pub use mechanism::{AgentOutcome, AuctionConfig, AuctionReport, PairingMode, TieRule};
pub use strategy::BidDecision;
pub use value_model::{AgentValuation, PremiumValueDistribution, SafetyCostModel, ValueFamily};
