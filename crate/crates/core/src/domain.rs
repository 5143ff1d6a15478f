//! Domain types of the RLHF game and the valuation / welfare arithmetic
//! shared by every other module.
//!
//! A language model is identified with its output distribution over a finite
//! outcome space of `K` sequences (the prompt is fixed and dropped). Reward
//! models are non-negative vectors over the same space, normalized either by
//! their sum or by their maximum.

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{GameError, Result};

/// Tolerance for simplex and normalization checks.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeSpaceRepr")]
pub struct OutcomeSpace {
    size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct OutcomeSpaceRepr {
    size: usize,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

impl TryFrom<OutcomeSpaceRepr> for OutcomeSpace {
    type Error = GameError;

    fn try_from(r: OutcomeSpaceRepr) -> Result<Self> {
        match r.labels {
            Some(labels) => Self::with_labels(labels),
            None => Self::new(r.size),
        }
    }
}

impl OutcomeSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(GameError::InvalidConfig(format!(
                "outcome space needs at least 2 outcomes, got {size}"
            )));
        }
        Ok(Self { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = Self::new(labels.len())?;
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// How a reward model is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    SumToOne,
    MaxToOne,
}

impl NormMode {
    /// The uniform reward model `rm*`: `1/K` everywhere under sum
    /// normalization, all ones under max normalization. Reporting it leaves
    /// the trained policy independent of the reported group size.
    pub fn uniform(self, k: usize) -> RewardModel {
        let value = match self {
            NormMode::SumToOne => 1.0 / k as f64,
            NormMode::MaxToOne => 1.0,
        };
        RewardModel {
            values: vec![value; k],
            mode: self,
        }
    }

    /// The normalizing statistic (sum or max) of `values`.
    pub fn statistic(self, values: &[f64]) -> f64 {
        match self {
            NormMode::SumToOne => values.iter().sum(),
            NormMode::MaxToOne => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// A non-negative reward vector under a declared normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardRepr")]
pub struct RewardModel {
    values: Vec<f64>,
    mode: NormMode,
}

#[derive(Deserialize)]
struct RewardRepr {
    values: Vec<f64>,
    mode: NormMode,
}

impl TryFrom<RewardRepr> for RewardModel {
    type Error = GameError;

    fn try_from(r: RewardRepr) -> Result<Self> {
        validate_reward_model(r.values, r.mode)
    }
}

/// Validates a reward vector without renormalizing it.
pub fn validate_reward_model(values: Vec<f64>, mode: NormMode) -> Result<RewardModel> {
    check_non_negative(&values)?;
    let observed = mode.statistic(&values);
    if (observed - 1.0).abs() > NORM_TOL {
        return Err(GameError::NormalizationViolated { mode, observed });
    }
    Ok(RewardModel { values, mode })
}

fn check_non_negative(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(GameError::NonFiniteEntry { index, value });
        }
        if value < 0.0 {
            return Err(GameError::NegativeEntry { index, value });
        }
    }
    Ok(())
}

impl RewardModel {
    pub fn new(values: Vec<f64>, mode: NormMode) -> Result<Self> {
        validate_reward_model(values, mode)
    }

    /// A reward vector that only has to be non-negative. Used for noisy
    /// inputs, which must not be renormalized (renormalizing could break
    /// the sup-norm bound on the perturbation).
    pub fn unnormalized(values: Vec<f64>, mode: NormMode) -> Result<Self> {
        check_non_negative(&values)?;
        Ok(Self { values, mode })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Lowest index attaining the maximum.
    pub fn argmax(&self) -> usize {
        first_index_of(&self.values, self.max())
    }

    /// Lowest index attaining the minimum.
    pub fn argmin(&self) -> usize {
        first_index_of(&self.values, self.min())
    }

    /// True when every outcome carries the same reward.
    pub fn is_constant(&self) -> bool {
        self.max() - self.min() <= NORM_TOL
    }
}

fn first_index_of(values: &[f64], target: f64) -> usize {
    values.iter().position(|&v| v == target).unwrap_or(0)
}

/// A strictly positive distribution over outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Policy {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Policy {
    type Error = GameError;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Policy::new(probs)
    }
}

impl From<Policy> for Vec<f64> {
    fn from(p: Policy) -> Self {
        p.probs
    }
}

impl Policy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for (index, &value) in probs.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(GameError::NonPositiveProbability { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(GameError::NotADistribution { sum });
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    /// Divides by the sum. Fails if an entry is not strictly positive.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Sup-norm distance to another policy of the same dimension.
    pub fn sup_distance(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A group's private type: its reward model and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupType {
    pub rm: RewardModel,
    pub w: u32,
}

impl GroupType {
    pub fn new(rm: RewardModel, w: u32) -> Self {
        Self { rm, w }
    }

    /// The aggregate-reward contribution `w * rm(x)`.
    pub fn weighted(&self, x: usize) -> f64 {
        f64::from(self.w) * self.rm.values[x]
    }
}

/// Secondary ordering applied when several candidate policies attain the
/// same welfare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer the lexicographically largest `(v_1, ..., v_n)`, then the
    /// lowest index.
    #[default]
    ValuationLex,
    /// Lowest index only.
    IndexOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GameConfigRepr")]
pub struct GameConfig {
    space: OutcomeSpace,
    initial: Policy,
    divergence: DivergenceSpec,
    mode: NormMode,
    w_bar: u32,
    #[serde(default)]
    tie_break: TieBreak,
}

#[derive(Deserialize)]
struct GameConfigRepr {
    space: OutcomeSpace,
    initial: Policy,
    divergence: DivergenceSpec,
    mode: NormMode,
    w_bar: u32,
    #[serde(default)]
    tie_break: TieBreak,
}

impl TryFrom<GameConfigRepr> for GameConfig {
    type Error = GameError;

    fn try_from(r: GameConfigRepr) -> Result<Self> {
        GameConfig::new(
            r.space,
            r.initial,
            r.divergence,
            r.mode,
            r.w_bar,
            r.tie_break,
        )
    }
}

impl GameConfig {
    pub fn new(
        space: OutcomeSpace,
        initial: Policy,
        divergence: DivergenceSpec,
        mode: NormMode,
        w_bar: u32,
        tie_break: TieBreak,
    ) -> Result<Self> {
        if initial.len() != space.size() {
            return Err(GameError::DimensionMismatch {
                expected: space.size(),
                found: initial.len(),
            });
        }
        if w_bar < 1 {
            return Err(GameError::InvalidConfig("w_bar must be at least 1".into()));
        }
        Ok(Self {
            space,
            initial,
            divergence,
            mode,
            w_bar,
            tie_break,
        })
    }

    /// Shorthand used throughout the tests and samplers.
    pub fn simple(
        initial: Policy,
        divergence: DivergenceSpec,
        mode: NormMode,
        w_bar: u32,
    ) -> Result<Self> {
        let space = OutcomeSpace::new(initial.len())?;
        Self::new(space, initial, divergence, mode, w_bar, TieBreak::default())
    }

    pub fn space(&self) -> &OutcomeSpace {
        &self.space
    }

    pub fn k(&self) -> usize {
        self.space.size()
    }

    pub fn initial(&self) -> &Policy {
        &self.initial
    }

    pub fn divergence(&self) -> &DivergenceSpec {
        &self.divergence
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn w_bar(&self) -> u32 {
        self.w_bar
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn with_divergence(&self, divergence: DivergenceSpec) -> Self {
        Self {
            divergence,
            ..self.clone()
        }
    }

    pub fn with_tie_break(&self, tie_break: TieBreak) -> Self {
        Self {
            tie_break,
            ..self.clone()
        }
    }

    /// Checks dimensions and the public size bound of a report profile.
    pub fn validate_reports(&self, reports: &[GroupType]) -> Result<()> {
        for g in reports {
            check_dim(self.k(), g.rm.len())?;
            if g.w < 1 || g.w > self.w_bar {
                return Err(GameError::InvalidConfig(format!(
                    "group size {} outside [1, {}]",
                    g.w, self.w_bar
                )));
            }
        }
        Ok(())
    }
}

/// Result of one play of the game.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameOutcome {
    #[serde(rename = "final")]
    pub final_policy: Policy,
    /// `w_i * v_i` under the TRUE types.
    pub valuations: Vec<f64>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    /// Objective value under the REPORTED types.
    pub asw: f64,
    pub asw_minus: Vec<f64>,
    /// Lagrange multiplier of the optimality condition, when the solver
    /// produces one.
    pub mu: Option<f64>,
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GameError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Expected reward `sum_x p(x) rm(x)`.
pub fn valuation(p: &Policy, rm: &RewardModel) -> Result<f64> {
    check_dim(p.len(), rm.len())?;
    Ok(dot(p.probs(), rm.values()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine social welfare: weighted valuations minus the divergence to the
/// initial policy.
pub fn asw(p: &Policy, reports: &[GroupType], cfg: &GameConfig) -> Result<f64> {
    let welfare = weighted_valuations(p, reports)?.iter().sum::<f64>();
    Ok(welfare - cfg.divergence().divergence(p, cfg.initial())?)
}

/// ASW without group `i`'s valuation term.
pub fn asw_minus_i(p: &Policy, reports: &[GroupType], i: usize, cfg: &GameConfig) -> Result<f64> {
    if i >= reports.len() {
        return Err(GameError::IndexOutOfRange {
            index: i,
            len: reports.len(),
        });
    }
    let total = asw(p, reports, cfg)?;
    Ok(total - f64::from(reports[i].w) * valuation(p, &reports[i].rm)?)
}

/// `w_i * v_i(p)` for every group.
pub fn weighted_valuations(p: &Policy, groups: &[GroupType]) -> Result<Vec<f64>> {
    groups
        .iter()
        .map(|g| Ok(f64::from(g.w) * valuation(p, &g.rm)?))
        .collect()
}
