//! Payment rules and the game runner.

use std::fmt::Debug;
use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{
    asw, asw_minus_i, check_dim, weighted_valuations, GameConfig, GameOutcome, GroupType, Policy,
};
use crate::error::{GameError, Result};
use crate::training::{solve_restricted, CandidateSet, Solver, Trained};

/// Builds the candidate set used for group `i`'s without-`i` solve.
///
/// The builder only ever sees the other groups' reports, so the resulting
/// set cannot depend on what group `i` says.
pub trait CandidateBuilder: Send + Sync + Debug {
    fn build(&self, cfg: &GameConfig, i: usize, others: &[GroupType]) -> Result<CandidateSet>;
}

/// A builder that hands out the same list for every group, regardless of
/// reports.
#[derive(Debug, Clone)]
pub struct FixedLists(pub Vec<CandidateSet>);

impl CandidateBuilder for FixedLists {
    fn build(&self, _cfg: &GameConfig, i: usize, _others: &[GroupType]) -> Result<CandidateSet> {
        self.0.get(i).cloned().ok_or(GameError::IndexOutOfRange {
            index: i,
            len: self.0.len(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum PaymentRule {
    Zero,
    /// `p_i = ASW_{-i}(psi(reports_{-i})) - ASW_{-i}(psi(reports))`.
    AffineMaximizer,
    /// The affine maximizer payment plus a constant surcharge. Still DSIC,
    /// but not individually rational once the surcharge exceeds a group's
    /// truthful surplus.
    ShiftedAffine(f64),
    /// Saved-checkpoint heuristic: the without-`i` argmax ranges over the
    /// same set that must contain the trained policy.
    RestrictedH1(CandidateSet),
    /// Early-stopping heuristic: the without-`i` argmax ranges over a set
    /// built from the other groups' reports only.
    RestrictedH2(Arc<dyn CandidateBuilder>),
}

impl PaymentRule {
    pub fn name(&self) -> &'static str {
        match self {
            PaymentRule::Zero => "zero",
            PaymentRule::AffineMaximizer => "affine_maximizer",
            PaymentRule::ShiftedAffine(_) => "shifted_affine",
            PaymentRule::RestrictedH1(_) => "restricted_h1",
            PaymentRule::RestrictedH2(_) => "restricted_h2",
        }
    }
}

fn without(reports: &[GroupType], i: usize) -> Vec<GroupType> {
    reports
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, g)| g.clone())
        .collect()
}

/// Affine maximizer payments. Solves the full game once and each
/// without-`i` game once, in parallel.
pub fn payment_aff(cfg: &GameConfig, reports: &[GroupType], solver: &Solver) -> Result<Vec<f64>> {
    let full = solver.train(cfg, reports)?.policy;
    aff_given(cfg, reports, solver, &full)
}

fn aff_given(
    cfg: &GameConfig,
    reports: &[GroupType],
    solver: &Solver,
    full: &Policy,
) -> Result<Vec<f64>> {
    (0..reports.len())
        .into_par_iter()
        .map(|i| {
            let others = without(reports, i);
            let alone = solver.train(cfg, &others)?.policy;
            Ok(asw(&alone, &others, cfg)? - asw_minus_i(full, reports, i, cfg)?)
        })
        .collect()
}

/// Payments of the restricted-set heuristics. `solver` produces the
/// full-game policy; only the without-`i` side uses the candidate sets.
pub fn payment_restricted(
    cfg: &GameConfig,
    reports: &[GroupType],
    rule: &PaymentRule,
    solver: &Solver,
) -> Result<Vec<f64>> {
    let full = solver.train(cfg, reports)?.policy;
    restricted_given(cfg, reports, rule, &full)
}

fn restricted_given(
    cfg: &GameConfig,
    reports: &[GroupType],
    rule: &PaymentRule,
    full: &Policy,
) -> Result<Vec<f64>> {
    (0..reports.len())
        .into_par_iter()
        .map(|i| {
            let others = without(reports, i);
            let set = match rule {
                PaymentRule::RestrictedH1(set) => set.clone(),
                PaymentRule::RestrictedH2(builder) => builder.build(cfg, i, &others)?,
                _ => {
                    return Err(GameError::InvalidConfig(format!(
                        "{} is not a restricted payment rule",
                        rule.name()
                    )))
                }
            };
            let (alone, _) = solve_restricted(cfg, &others, &set)?;
            Ok(asw(&alone, &others, cfg)? - asw_minus_i(full, reports, i, cfg)?)
        })
        .collect()
}

/// Payments for any rule, given the already-trained full-game policy.
pub fn payments(
    cfg: &GameConfig,
    reports: &[GroupType],
    rule: &PaymentRule,
    solver: &Solver,
    full: &Policy,
) -> Result<Vec<f64>> {
    match rule {
        PaymentRule::Zero => Ok(vec![0.0; reports.len()]),
        PaymentRule::AffineMaximizer => aff_given(cfg, reports, solver, full),
        PaymentRule::ShiftedAffine(c) => Ok(aff_given(cfg, reports, solver, full)?
            .into_iter()
            .map(|p| p + c)
            .collect()),
        PaymentRule::RestrictedH1(_) | PaymentRule::RestrictedH2(_) => {
            restricted_given(cfg, reports, rule, full)
        }
    }
}

/// Plays one round: trains on `reports`, charges per `rule`, and scores
/// groups by their `true_types`.
pub fn run_game(
    cfg: &GameConfig,
    reports: &[GroupType],
    true_types: &[GroupType],
    rule: &PaymentRule,
    solver: &Solver,
) -> Result<GameOutcome> {
    check_dim(reports.len(), true_types.len())?;
    if reports.is_empty() {
        return Err(GameError::InvalidConfig(
            "a game needs at least one group".into(),
        ));
    }
    cfg.validate_reports(reports)?;
    cfg.validate_reports(true_types)?;
    let Trained { policy, mu } = solver.train(cfg, reports)?;
    let payments = payments(cfg, reports, rule, solver, &policy)?;
    let valuations = weighted_valuations(&policy, true_types)?;
    let utilities = valuations
        .iter()
        .zip(&payments)
        .map(|(v, p)| v - p)
        .collect();
    let asw_value = asw(&policy, reports, cfg)?;
    let asw_minus = (0..reports.len())
        .map(|i| asw_minus_i(&policy, reports, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(GameOutcome {
        final_policy: policy,
        valuations,
        payments,
        utilities,
        asw: asw_value,
        asw_minus,
        mu,
    })
}
