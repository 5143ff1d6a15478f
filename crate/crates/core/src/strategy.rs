//! Misreporting strategies, the manipulation detector `t`, and a grid-based
//! best-response search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{GameConfig, GroupType, NormMode, RewardModel};
use crate::error::{GameError, Result};
use crate::mechanism::{run_game, PaymentRule};
use crate::training::{aggregate, solve_exact, Solver};

/// A unilateral deviation, applied to a group's true type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Strategy {
    Truthful,
    EpsilonShift(f64),
    SizeScale(f64),
    Blend(f64),
    Explicit(GroupType),
}

impl Strategy {
    /// The report a group with type `truth` submits when the other groups
    /// report `opponents`.
    pub fn apply(
        &self,
        cfg: &GameConfig,
        truth: &GroupType,
        opponents: &[GroupType],
    ) -> Result<GroupType> {
        match self {
            Strategy::Truthful => Ok(truth.clone()),
            Strategy::EpsilonShift(eps) => {
                Ok(GroupType::new(epsilon_shift(&truth.rm, *eps)?, truth.w))
            }
            Strategy::SizeScale(alpha) => {
                if !(*alpha > 0.0) {
                    return Err(GameError::InvalidStrategy(format!(
                        "alpha must be positive, got {alpha}"
                    )));
                }
                Ok(size_scale(truth, *alpha, cfg.w_bar()))
            }
            Strategy::Blend(beta) => Ok(GroupType::new(
                blend(&truth.rm, opponents, *beta, truth.rm.mode())?,
                truth.w,
            )),
            Strategy::Explicit(report) => Ok(report.clone()),
        }
    }
}

/// Pretends to like the favourite outcome a little more and the least
/// favourite a little less. SumToOne moves `eps` mass from the argmin to the
/// argmax; MaxToOne lowers the argmin by `eps`.
pub fn epsilon_shift(rm: &RewardModel, eps: f64) -> Result<RewardModel> {
    if rm.is_constant() {
        return Err(GameError::DegeneratePreference);
    }
    if !(eps > 0.0) {
        return Err(GameError::InvalidStrategy(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let (hi, lo) = (rm.argmax(), rm.argmin());
    let mut values = rm.values().to_vec();
    let limit = match rm.mode() {
        NormMode::SumToOne => (1.0 - values[hi]).min(values[lo]),
        NormMode::MaxToOne => values[lo],
    };
    if eps >= limit {
        return Err(GameError::EpsilonTooLarge {
            epsilon: eps,
            limit,
        });
    }
    if rm.mode() == NormMode::SumToOne {
        values[hi] += eps;
    }
    values[lo] -= eps;
    RewardModel::new(values, rm.mode())
}

/// `beta rm_i + (1 - beta) rm_{-i}` with `rm_{-i}` the size-weighted mean of
/// the opponents, clamped at zero and renormalized per `mode`.
pub fn blend(
    rm: &RewardModel,
    opponents: &[GroupType],
    beta: f64,
    mode: NormMode,
) -> Result<RewardModel> {
    if opponents.is_empty() {
        return Err(GameError::InvalidStrategy(
            "blend needs at least one opponent".into(),
        ));
    }
    if beta == 1.0 {
        return Ok(rm.clone());
    }
    let k = rm.len();
    let total_w: f64 = opponents.iter().map(|g| f64::from(g.w)).sum();
    let others = aggregate(k, opponents)?;
    let raw: Vec<f64> = rm
        .values()
        .iter()
        .zip(others.values())
        .map(|(&own, &agg)| (beta * own + (1.0 - beta) * agg / total_w).max(0.0))
        .collect();
    let scale = mode.statistic(&raw);
    if scale <= 0.0 {
        return Err(GameError::AllZeroAfterClamp);
    }
    RewardModel::new(raw.into_iter().map(|v| v / scale).collect(), mode)
}

/// Claims `round(alpha * w)` members, clamped to `[1, w_bar]`; halves round up.
pub fn size_scale(t: &GroupType, alpha: f64, w_bar: u32) -> GroupType {
    let scaled = (alpha * f64::from(t.w) + 0.5).floor();
    let w = scaled.clamp(1.0, f64::from(w_bar)) as u32;
    GroupType::new(t.rm.clone(), w)
}

/// `t(z) = sum_x (rm_i(z) - rm_i(x)) pi_0(x) / f''(pi(x) / pi_0(x))` with
/// `pi = psi(reports)`. A non-zero entry marks a coordinate where a small
/// misreport moves group `i`'s valuation when nobody is charged.
pub fn t_function(cfg: &GameConfig, reports: &[GroupType], i: usize) -> Result<Vec<f64>> {
    let me = reports.get(i).ok_or(GameError::IndexOutOfRange {
        index: i,
        len: reports.len(),
    })?;
    let pi = solve_exact(cfg, reports)?.policy;
    let weights = curvature_weights(cfg, pi.probs())?;
    let rm = me.rm.values();
    Ok(rm
        .iter()
        .map(|&rz| rm.iter().zip(&weights).map(|(&rx, &c)| (rz - rx) * c).sum())
        .collect())
}

/// `c(x) = pi_0(x) / f''(pi(x) / pi_0(x))`.
fn curvature_weights(cfg: &GameConfig, pi: &[f64]) -> Result<Vec<f64>> {
    pi.iter()
        .zip(cfg.initial().probs())
        .map(|(&p, &p0)| Ok(p0 / cfg.divergence().f_double_prime(p / p0)?))
        .collect()
}

/// The small misreport that the sign of `t(x)` marks as profitable, or
/// `None` when `t(x) = 0` or no admissible perturbation of size `delta`
/// exists at `x`.
///
/// MaxToOne moves `rm(x)` alone by `delta * sign(t(x))`. SumToOne must
/// compensate elsewhere: a decrease at `x` is paired with an increase at the
/// argmax; an increase at `x` is paired with a decrease at some `x2` with
/// `rm(x) >= rm(x2) > 0` and smaller curvature weight.
pub fn t_deviation(
    cfg: &GameConfig,
    reports: &[GroupType],
    i: usize,
    x: usize,
    delta: f64,
) -> Result<Option<RewardModel>> {
    let t = t_function(cfg, reports, i)?;
    let tx = *t.get(x).ok_or(GameError::IndexOutOfRange {
        index: x,
        len: t.len(),
    })?;
    if tx == 0.0 {
        return Ok(None);
    }
    let rm = &reports[i].rm;
    let mut values = rm.values().to_vec();
    match rm.mode() {
        NormMode::MaxToOne => {
            let moved = values[x] + delta * tx.signum();
            if values[x] >= 1.0 || !(0.0..1.0).contains(&moved) {
                return Ok(None);
            }
            values[x] = moved;
        }
        NormMode::SumToOne if tx < 0.0 => {
            let top = rm.argmax();
            if top == x || values[x] < delta || values[top] + delta > 1.0 {
                return Ok(None);
            }
            values[x] -= delta;
            values[top] += delta;
        }
        NormMode::SumToOne => {
            let pi = solve_exact(cfg, reports)?.policy;
            let c = curvature_weights(cfg, pi.probs())?;
            let partner = (0..values.len())
                .filter(|&z| z != x && values[z] <= values[x] && values[z] >= delta && c[z] < c[x])
                .min_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
            let Some(z) = partner else { return Ok(None) };
            if values[x] + delta > 1.0 {
                return Ok(None);
            }
            values[x] += delta;
            values[z] -= delta;
        }
    }
    RewardModel::new(values, rm.mode()).map(Some)
}

/// Finite grid of deviations searched by [`best_response`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Per-coordinate additive perturbations of the reward model, followed
    /// by clamping at zero and renormalization.
    pub perturbations: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            alphas: vec![0.2, 0.5, 1.5, 2.0, 3.0],
            betas: vec![0.5, 0.8, 1.5, 2.0, 3.0],
            epsilons: vec![0.001, 0.01, 0.05, 0.1],
            perturbations: vec![-0.1, -0.01, 0.01, 0.1],
        }
    }
}

impl SearchGrid {
    /// Every strategy in the grid that yields a valid report for `truth`,
    /// truthful first.
    pub fn strategies(
        &self,
        cfg: &GameConfig,
        truth: &GroupType,
        opponents: &[GroupType],
    ) -> Vec<Strategy> {
        let mut out = vec![Strategy::Truthful];
        out.extend(self.epsilons.iter().map(|&e| Strategy::EpsilonShift(e)));
        out.extend(self.alphas.iter().map(|&a| Strategy::SizeScale(a)));
        if !opponents.is_empty() {
            out.extend(self.betas.iter().map(|&b| Strategy::Blend(b)));
        }
        let mode = truth.rm.mode();
        for x in 0..truth.rm.len() {
            for &d in &self.perturbations {
                let mut values = truth.rm.values().to_vec();
                values[x] = (values[x] + d).max(0.0);
                let scale = mode.statistic(&values);
                if scale <= 0.0 {
                    continue;
                }
                if let Ok(rm) =
                    RewardModel::new(values.into_iter().map(|v| v / scale).collect(), mode)
                {
                    out.push(Strategy::Explicit(GroupType::new(rm, truth.w)));
                }
            }
        }
        out.retain(|s| s.apply(cfg, truth, opponents).is_ok());
        out
    }
}

/// Gains below this are treated as rounding noise by [`best_response`].
pub const GAIN_NOISE: f64 = 1e-12;

/// Best deviation for group `i` (whose entry in `reports` is its true type)
/// among the grid, with its utility gain over truthful reporting. A later
/// strategy must beat the incumbent by more than [`GAIN_NOISE`], so ties go
/// to the earliest strategy in grid order.
pub fn best_response(
    cfg: &GameConfig,
    reports: &[GroupType],
    i: usize,
    rule: &PaymentRule,
    solver: &Solver,
    search: &SearchGrid,
) -> Result<(Strategy, f64)> {
    let truth = reports.get(i).ok_or(GameError::IndexOutOfRange {
        index: i,
        len: reports.len(),
    })?;
    let opponents = others(reports, i);
    let truthful = run_game(cfg, reports, reports, rule, solver)?.utilities[i];
    let strategies = search.strategies(cfg, truth, &opponents);
    let gains = strategies
        .par_iter()
        .map(|s| {
            let mut profile = reports.to_vec();
            profile[i] = s.apply(cfg, truth, &opponents)?;
            Ok(run_game(cfg, &profile, reports, rule, solver)?.utilities[i] - truthful)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (j, &g) in gains.iter().enumerate() {
        if g > gains[best] + GAIN_NOISE {
            best = j;
        }
    }
    Ok((strategies[best].clone(), gains[best]))
}

fn others(reports: &[GroupType], i: usize) -> Vec<GroupType> {
    reports
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, g)| g.clone())
        .collect()
}

/// `(delta valuation, delta utility)` of group `i` when it switches from
/// truthful reporting to `strategy`, the other reports held fixed.
pub fn misreport_gain(
    cfg: &GameConfig,
    reports: &[GroupType],
    true_types: &[GroupType],
    i: usize,
    strategy: &Strategy,
    rule: &PaymentRule,
    solver: &Solver,
) -> Result<(f64, f64)> {
    let truth = true_types.get(i).ok_or(GameError::IndexOutOfRange {
        index: i,
        len: true_types.len(),
    })?;
    let mut honest = reports.to_vec();
    honest[i] = truth.clone();
    let mut deviated = honest.clone();
    deviated[i] = strategy.apply(cfg, truth, &others(&honest, i))?;
    let a = run_game(cfg, &honest, true_types, rule, solver)?;
    let b = run_game(cfg, &deviated, true_types, rule, solver)?;
    Ok((
        b.valuations[i] - a.valuations[i],
        b.utilities[i] - a.utilities[i],
    ))
}
