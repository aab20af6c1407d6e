//! Analysis and simulation toolkit for balance-weighted consensus.
//!
//! The crate is organised bottom-up: [`population_model`] defines agents and
//! corruption indicators, [`participation_stats`] derives participation
//! thresholds, [`signaling_game`] models the join/abstain game and staking
//! equilibria, [`capital_market`] handles capital-based thresholds and attack
//! costs, [`fiat_ledger`] holds custodial balances and weights,
//! [`krnc_protocol`] is the message-level protocol state machine and
//! [`attack_scenarios`] wires the above into reproducible scenarios.

// Range checks are written negated so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack_scenarios;
pub mod capital_market;
pub mod fiat_ledger;
pub mod krnc_protocol;
pub mod participation_stats;
pub mod population_model;
pub mod signaling_game;
pub mod share;

pub use share::Share;
