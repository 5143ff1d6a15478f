//! Mechanism design for multi-group RLHF fine-tuning games.
//!
//! Groups report reward models and sizes, a training rule picks a policy that
//! maximizes weighted valuation minus a divergence from a reference policy,
//! and a payment rule charges each group so that truthful reporting is a
//! dominant strategy.

// `!(x > 0.0)` style guards are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod domain;
pub mod error;
pub mod mechanism;
pub mod strategy;
pub mod training;
pub mod verify;

pub use divergence::{DivergenceKind, DivergenceSpec, SmoothGenerator};
pub use domain::{
    asw, asw_minus_i, valuation, weighted_valuations, GameConfig, GameOutcome, GroupType, NormMode,
    OutcomeSpace, Policy, RewardModel, TieBreak,
};
pub use error::{GameError, Result};
pub use mechanism::{payment_aff, payment_restricted, run_game, CandidateBuilder, PaymentRule};
pub use strategy::{best_response, misreport_gain, t_function, SearchGrid, Strategy};
pub use training::{aggregate, AggregateReward, CandidateSet, SolveResult, Solver, Trained};
pub use verify::{CheckReport, CheckSettings, Instance, InstanceSource, NoiseModel};
