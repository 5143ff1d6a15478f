//! SW-Max training rules: maximize
//! `ASW(pi) = sum_i w_i v_i(pi) - D_f(pi || pi_0)` over the simplex.
//!
//! Every interior optimum satisfies, for some multiplier `mu`,
//!
//! ```text
//! r(x) - f'(pi(x) / pi_0(x)) = mu    for all x,   sum_x pi(x) = 1
//! ```
//!
//! with `r = sum_i w_i rm_i` the aggregate reward. KL and chi-squared have
//! closed forms; any smooth generator is handled by bisection on `mu`. A
//! brute-force grid oracle and an argmax over a finite candidate set round
//! out the rules.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::domain::{asw, check_dim, GameConfig, GroupType, Policy, TieBreak};
use crate::error::{GameError, Result};

/// Probability mass assigned to outcomes the chi-squared optimum would drive
/// to zero or below. Keeps every policy strictly positive.
pub const POSITIVITY_FLOOR: f64 = 1e-9;

const BISECTION_MAX_ITERS: usize = 200;
const BISECTION_TOL: f64 = 1e-12;
const BRACKET_EXPANSIONS: usize = 60;

/// Largest outcome space the grid oracle accepts.
pub const GRID_MAX_OUTCOMES: usize = 4;
/// Largest number of grid points the oracle enumerates.
pub const GRID_MAX_POINTS: u64 = 2_000_000_000;

/// `r(x) = sum_i w_i rm_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReward(Vec<f64>);

impl AggregateReward {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_constant(&self) -> bool {
        self.max() == self.min()
    }
}

pub fn aggregate(k: usize, reports: &[GroupType]) -> Result<AggregateReward> {
    let mut r = vec![0.0; k];
    for g in reports {
        check_dim(k, g.rm.len())?;
        for (x, rx) in r.iter_mut().enumerate() {
            *rx += g.weighted(x);
        }
    }
    Ok(AggregateReward(r))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub policy: Policy,
    pub mu: f64,
    pub iterations: usize,
    /// `|sum_x pi(x) - 1|` of the returned policy.
    pub residual: f64,
    /// Outcomes held at [`POSITIVITY_FLOOR`] instead of satisfying the
    /// optimality condition.
    pub floored: usize,
}

impl SolveResult {
    fn new(policy: Policy, mu: f64, iterations: usize, floored: usize) -> Self {
        let residual = (policy.probs().iter().sum::<f64>() - 1.0).abs();
        Self {
            policy,
            mu,
            iterations,
            residual,
            floored,
        }
    }

    pub fn has_full_support(&self) -> bool {
        self.floored == 0
    }
}

/// `max_x |r(x) - f'(pi(x)/pi_0(x)) - mu|`.
pub fn kkt_residual(cfg: &GameConfig, r: &AggregateReward, result: &SolveResult) -> f64 {
    let spec = cfg.divergence();
    result
        .policy
        .probs()
        .iter()
        .zip(cfg.initial().probs())
        .zip(r.values())
        .map(|((&p, &p0), &rx)| (rx - spec.f_prime_raw(p / p0) - result.mu).abs())
        .fold(0.0, f64::max)
}

fn constant_solution(cfg: &GameConfig, r: &AggregateReward) -> SolveResult {
    // a constant tilt leaves the initial policy optimal
    let mu = r.values()[0] - cfg.divergence().f_prime_raw(1.0);
    SolveResult::new(cfg.initial().clone(), mu, 0, 0)
}

fn require_kind(cfg: &GameConfig, want: &'static str, solver: &'static str) -> Result<()> {
    let kind = cfg.divergence().kind().name();
    if kind == want {
        Ok(())
    } else {
        Err(GameError::UnsupportedDivergence { solver, kind })
    }
}

/// Closed-form KL optimum: the exponential tilt `pi(x) ∝ pi_0(x) e^{r(x)/lambda}`.
pub fn solve_kl(cfg: &GameConfig, reports: &[GroupType]) -> Result<SolveResult> {
    solve_kl_aggregate(cfg, &aggregate(cfg.k(), reports)?)
}

pub fn solve_kl_aggregate(cfg: &GameConfig, r: &AggregateReward) -> Result<SolveResult> {
    require_kind(cfg, "kl", "solve_kl")?;
    check_dim(cfg.k(), r.values().len())?;
    if r.is_constant() {
        return Ok(constant_solution(cfg, r));
    }
    let lambda = cfg.divergence().lambda();
    let top = r.max();
    let tilted: Vec<f64> = cfg
        .initial()
        .probs()
        .iter()
        .zip(r.values())
        .map(|(&p0, &rx)| p0 * ((rx - top) / lambda).exp())
        .collect();
    let total: f64 = tilted.iter().sum();
    // mu = lambda ln Z - lambda with Z = sum pi_0 e^{r/lambda}
    let mu = top + lambda * total.ln() - lambda;
    let policy = Policy::normalized(tilted)?;
    Ok(SolveResult::new(policy, mu, 0, 0))
}

/// Whether a chi-squared optimum may put floor mass on all but one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interiority {
    /// Hold outcomes at the positivity floor as needed.
    #[default]
    Clamp,
    /// Fail with [`GameError::DegenerateSolution`] when fewer than two
    /// outcomes keep mass above the floor.
    Require,
}

/// Closed-form chi-squared optimum
/// `pi(x) = pi_0(x) (1 + (r(x) - mu) / (2 lambda))` with an active-set pass
/// for outcomes the interior formula drives below the positivity floor.
pub fn solve_chi2(cfg: &GameConfig, reports: &[GroupType]) -> Result<SolveResult> {
    solve_chi2_with(cfg, reports, Interiority::Clamp)
}

pub fn solve_chi2_with(
    cfg: &GameConfig,
    reports: &[GroupType],
    interiority: Interiority,
) -> Result<SolveResult> {
    solve_chi2_aggregate(cfg, &aggregate(cfg.k(), reports)?, interiority)
}

pub fn solve_chi2_aggregate(
    cfg: &GameConfig,
    r: &AggregateReward,
    interiority: Interiority,
) -> Result<SolveResult> {
    require_kind(cfg, "chi_squared", "solve_chi2")?;
    check_dim(cfg.k(), r.values().len())?;
    if r.is_constant() {
        return Ok(constant_solution(cfg, r));
    }
    let k = cfg.k();
    let two_lambda = 2.0 * cfg.divergence().lambda();
    let p0 = cfg.initial().probs();
    let r = r.values();
    let mut fixed = vec![false; k];
    let mut n_fixed = 0usize;
    let mut rounds = 0usize;
    let (mu, values) = loop {
        rounds += 1;
        let (mass0, mass_r) = (0..k)
            .filter(|&x| !fixed[x])
            .fold((0.0, 0.0), |(a, b), x| (a + p0[x], b + p0[x] * r[x]));
        let target = 1.0 - POSITIVITY_FLOOR * n_fixed as f64;
        // sum_free p0 (1 + (r - mu) / 2l) = target
        let mu = if n_fixed == 0 {
            mass_r
        } else {
            (mass_r + two_lambda * (mass0 - target)) / mass0
        };
        let values: Vec<f64> = (0..k)
            .map(|x| {
                if fixed[x] {
                    POSITIVITY_FLOOR
                } else {
                    p0[x] * (1.0 + (r[x] - mu) / two_lambda)
                }
            })
            .collect();
        let worst = (0..k)
            .filter(|&x| !fixed[x])
            .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
            .expect("at least one free outcome");
        if values[worst] >= POSITIVITY_FLOOR || k - n_fixed == 1 {
            break (mu, values);
        }
        fixed[worst] = true;
        n_fixed += 1;
    };
    let support = k - n_fixed;
    if interiority == Interiority::Require && support < 2 {
        return Err(GameError::DegenerateSolution { support });
    }
    let policy = Policy::normalized(values)?;
    Ok(SolveResult::new(policy, mu, rounds, n_fixed))
}

/// Monotone bisection on `mu` for `sum_x max(pi_0(x) g(r(x) - mu), floor) = 1`
/// with `g = (f')^{-1}` clamped below at zero. Works for any divergence kind.
pub fn solve_generic(cfg: &GameConfig, reports: &[GroupType]) -> Result<SolveResult> {
    solve_generic_aggregate(cfg, &aggregate(cfg.k(), reports)?)
}

pub fn solve_generic_aggregate(cfg: &GameConfig, r: &AggregateReward) -> Result<SolveResult> {
    check_dim(cfg.k(), r.values().len())?;
    if r.is_constant() {
        return Ok(constant_solution(cfg, r));
    }
    let spec = cfg.divergence();
    let p0 = cfg.initial().probs();
    let mass = |mu: f64| -> f64 {
        p0.iter()
            .zip(r.values())
            .map(|(&q, &rx)| tilted_mass(spec, q, rx - mu))
            .sum()
    };

    let min_p0 = p0.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = r.min() - spec.f_prime_raw(2.0 / min_p0).abs();
    let mut hi = r.max() + spec.f_prime_raw(POSITIVITY_FLOOR).abs();
    let mut width = (hi - lo).max(1.0);
    let mut expansions = 0;
    while !(mass(lo) >= 1.0 && mass(hi) <= 1.0) {
        if expansions == BRACKET_EXPANSIONS {
            return Err(GameError::BracketFailure { expansions });
        }
        if !(mass(lo) >= 1.0) {
            lo -= width;
        }
        if !(mass(hi) <= 1.0) {
            hi += width;
        }
        width *= 2.0;
        expansions += 1;
    }

    let mut mu = 0.5 * (lo + hi);
    let mut iterations = 0;
    while iterations < BISECTION_MAX_ITERS {
        iterations += 1;
        mu = 0.5 * (lo + hi);
        let s = mass(mu);
        if (s - 1.0).abs() <= BISECTION_TOL || mu <= lo || mu >= hi {
            break;
        }
        if s > 1.0 {
            lo = mu;
        } else {
            hi = mu;
        }
    }

    let mut floored = 0;
    let values: Vec<f64> = p0
        .iter()
        .zip(r.values())
        .map(|(&q, &rx)| {
            let v = tilted_mass(spec, q, rx - mu);
            if v <= POSITIVITY_FLOOR {
                floored += 1;
            }
            v
        })
        .collect();
    let policy = Policy::normalized(values)?;
    Ok(SolveResult::new(policy, mu, iterations, floored))
}

fn tilted_mass(spec: &DivergenceSpec, p0: f64, y: f64) -> f64 {
    let g = spec.f_prime_inverse_raw(y).max(0.0);
    (p0 * g).max(POSITIVITY_FLOOR)
}

/// Dispatches to the closed form for KL and chi-squared, bisection otherwise.
pub fn solve_exact(cfg: &GameConfig, reports: &[GroupType]) -> Result<SolveResult> {
    solve_exact_aggregate(cfg, &aggregate(cfg.k(), reports)?)
}

pub fn solve_exact_aggregate(cfg: &GameConfig, r: &AggregateReward) -> Result<SolveResult> {
    match cfg.divergence().kind() {
        DivergenceKind::Kl => solve_kl_aggregate(cfg, r),
        DivergenceKind::ChiSquared => solve_chi2_aggregate(cfg, r, Interiority::Clamp),
        DivergenceKind::Generic(_) => solve_generic_aggregate(cfg, r),
    }
}

/// Relative tolerance under which two welfare values count as tied.
const WELFARE_TIE_TOL: f64 = 1e-12;

fn welfare_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= WELFARE_TIE_TOL * (1.0 + a.abs().max(b.abs())) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Unweighted valuations `(v_1, ..., v_n)` used as the secondary ordering.
fn valuation_key(probs: &[f64], reports: &[GroupType]) -> Vec<f64> {
    reports
        .iter()
        .map(|g| probs.iter().zip(g.rm.values()).map(|(p, r)| p * r).sum())
        .collect()
}

/// Is `cand` strictly preferred to the incumbent? Earlier entries win exact
/// ties, so callers scan in index order.
fn prefer(
    tie_break: TieBreak,
    cand_score: f64,
    best_score: f64,
    cand_key: impl FnOnce() -> (Vec<f64>, Vec<f64>),
) -> bool {
    match welfare_cmp(cand_score, best_score) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match tie_break {
            TieBreak::IndexOnly => false,
            TieBreak::ValuationLex => {
                let (cand, best) = cand_key();
                lex_cmp(&cand, &best) == Ordering::Greater
            }
        },
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// A finite, ordered set of candidate policies (a restricted parameter space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Policy>", into = "Vec<Policy>")]
pub struct CandidateSet {
    policies: Vec<Policy>,
}

impl TryFrom<Vec<Policy>> for CandidateSet {
    type Error = GameError;

    fn try_from(policies: Vec<Policy>) -> Result<Self> {
        CandidateSet::new(policies)
    }
}

impl From<CandidateSet> for Vec<Policy> {
    fn from(c: CandidateSet) -> Self {
        c.policies
    }
}

impl CandidateSet {
    pub fn new(policies: Vec<Policy>) -> Result<Self> {
        let first = policies.first().ok_or(GameError::EmptyCandidateSet)?;
        let k = first.len();
        for p in &policies {
            check_dim(k, p.len())?;
        }
        Ok(Self { policies })
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn contains(&self, p: &Policy) -> bool {
        self.policies.iter().any(|c| c == p)
    }
}

/// Argmax of ASW over `candidates`; ties go to the larger valuation vector
/// (per `cfg.tie_break()`), then the lowest index.
pub fn solve_restricted(
    cfg: &GameConfig,
    reports: &[GroupType],
    candidates: &CandidateSet,
) -> Result<(Policy, usize)> {
    check_dim(cfg.k(), candidates.policies[0].len())?;
    let scores = candidates
        .policies
        .iter()
        .map(|p| asw(p, reports, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (j, &score) in scores.iter().enumerate().skip(1) {
        let better = prefer(cfg.tie_break(), score, scores[best], || {
            (
                valuation_key(candidates.policies[j].probs(), reports),
                valuation_key(candidates.policies[best].probs(), reports),
            )
        });
        if better {
            best = j;
        }
    }
    Ok((candidates.policies[best].clone(), best))
}

/// Argmin of ASW over `candidates`, lowest index on ties. A deliberately
/// non-implementable rule used as a negative control by the verifiers.
pub fn solve_restricted_argmin(
    cfg: &GameConfig,
    reports: &[GroupType],
    candidates: &CandidateSet,
) -> Result<(Policy, usize)> {
    check_dim(cfg.k(), candidates.policies[0].len())?;
    let mut best = (asw(&candidates.policies[0], reports, cfg)?, 0);
    for (j, p) in candidates.policies.iter().enumerate().skip(1) {
        let score = asw(p, reports, cfg)?;
        if welfare_cmp(score, best.0) == Ordering::Less {
            best = (score, j);
        }
    }
    Ok((candidates.policies[best.1].clone(), best.1))
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * u128::from(n - j) / u128::from(j + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Brute-force oracle: enumerates every interior simplex grid point with
/// spacing `resolution` (all coordinates >= `resolution`) and returns the
/// ASW argmax. Ties: `cfg.tie_break()`, then lexicographic grid order.
///
/// The objective is separable across outcomes, so each outcome's term is
/// tabulated once and grid points are scored by table lookups. The grid is
/// partitioned by the first coordinate; partitions are reduced in order, so
/// the result does not depend on the number of worker threads.
pub fn solve_grid_oracle(
    cfg: &GameConfig,
    reports: &[GroupType],
    resolution: f64,
) -> Result<Policy> {
    let k = cfg.k();
    if !(resolution >= 1e-4) || resolution >= 0.5 {
        return Err(GameError::InvalidConfig(format!(
            "grid resolution must lie in [1e-4, 0.5), got {resolution}"
        )));
    }
    let n = (1.0 / resolution).round() as usize;
    let points = binomial(n as u64 - 1, k as u64 - 1);
    if k > GRID_MAX_OUTCOMES || points > GRID_MAX_POINTS {
        return Err(GameError::DimensionTooLarge {
            found: k,
            max: GRID_MAX_OUTCOMES,
            max_points: GRID_MAX_POINTS,
        });
    }
    if n < k {
        return Err(GameError::InvalidConfig(
            "grid too coarse for an interior point".into(),
        ));
    }
    let r = aggregate(k, reports)?;
    let spec = cfg.divergence();
    let table: Vec<Vec<f64>> = (0..k)
        .map(|x| {
            let p0 = cfg.initial().probs()[x];
            let rx = r.values()[x];
            (0..n)
                .map(|j| {
                    if j == 0 {
                        f64::NEG_INFINITY
                    } else {
                        let p = j as f64 / n as f64;
                        rx * p - p0 * spec.f_raw(p / p0)
                    }
                })
                .collect()
        })
        .collect();

    let tie_break = cfg.tie_break();
    let to_probs =
        |counts: &[usize]| -> Vec<f64> { counts.iter().map(|&c| c as f64 / n as f64).collect() };
    let better = |cand: &GridBest, best: &GridBest| -> bool {
        prefer(tie_break, cand.score, best.score, || {
            (
                valuation_key(&to_probs(&cand.counts), reports),
                valuation_key(&to_probs(&best.counts), reports),
            )
        })
    };

    let partitions: Vec<GridBest> = (1..=n - (k - 1))
        .into_par_iter()
        .map(|first| {
            let mut counts = vec![0usize; k];
            counts[0] = first;
            let mut best = GridBest {
                score: f64::NEG_INFINITY,
                counts: Vec::new(),
            };
            scan_grid(
                &table,
                n - first,
                1,
                table[0][first],
                &mut counts,
                &mut best,
                &better,
            );
            best
        })
        .collect();

    let mut best = partitions[0].clone();
    for cand in &partitions[1..] {
        if !cand.counts.is_empty() && better(cand, &best) {
            best = cand.clone();
        }
    }
    Policy::normalized(to_probs(&best.counts))
}

#[derive(Debug, Clone)]
struct GridBest {
    score: f64,
    counts: Vec<usize>,
}

/// Distributes `remaining` grid units over coordinates `depth..`, each at
/// least one unit, in lexicographic order.
fn scan_grid(
    table: &[Vec<f64>],
    remaining: usize,
    depth: usize,
    partial: f64,
    counts: &mut [usize],
    best: &mut GridBest,
    better: &impl Fn(&GridBest, &GridBest) -> bool,
) {
    let k = table.len();
    if depth == k - 1 {
        counts[depth] = remaining;
        offer(partial + table[depth][remaining], counts, best, better);
        return;
    }
    let slots_after = k - depth - 1;
    if depth == k - 2 {
        // innermost pair: the last coordinate is implied
        let (t1, t2) = (&table[depth], &table[depth + 1]);
        let line = |c: usize| partial + t1[c] + t2[remaining - c];
        // a plain max first; only points near it reach the allocating offer
        let top = (1..remaining).map(line).fold(f64::NEG_INFINITY, f64::max);
        if !best.counts.is_empty() && top + 1e-9 * (1.0 + top.abs()) < best.score {
            return;
        }
        let floor = top - 1e-9 * (1.0 + top.abs());
        for c in 1..remaining {
            let score = line(c);
            if score >= floor {
                counts[depth] = c;
                counts[depth + 1] = remaining - c;
                offer(score, counts, best, better);
            }
        }
        return;
    }
    for c in 1..=remaining - slots_after {
        counts[depth] = c;
        scan_grid(
            table,
            remaining - c,
            depth + 1,
            partial + table[depth][c],
            counts,
            best,
            better,
        );
    }
}

fn offer(
    score: f64,
    counts: &[usize],
    best: &mut GridBest,
    better: &impl Fn(&GridBest, &GridBest) -> bool,
) {
    let cand = GridBest {
        score,
        counts: counts.to_vec(),
    };
    if best.counts.is_empty() || better(&cand, best) {
        *best = cand;
    }
}

/// A training rule: maps reported types to a policy.
#[derive(Debug, Clone)]
pub enum Solver {
    /// Closed forms for KL / chi-squared, bisection for generic divergences.
    Exact,
    /// Bisection for every divergence kind.
    Bisection,
    /// Brute-force grid search.
    Grid { resolution: f64 },
    /// ASW argmax over a fixed candidate set.
    Restricted(CandidateSet),
    /// ASW argmin over a fixed candidate set (negative control only).
    ArgminRestricted(CandidateSet),
}

/// Output of [`Solver::train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: Policy,
    pub mu: Option<f64>,
}

impl Solver {
    pub fn train(&self, cfg: &GameConfig, reports: &[GroupType]) -> Result<Trained> {
        let from_result = |res: SolveResult| Trained {
            policy: res.policy,
            mu: Some(res.mu),
        };
        match self {
            Solver::Exact => solve_exact(cfg, reports).map(from_result),
            Solver::Bisection => solve_generic(cfg, reports).map(from_result),
            Solver::Grid { resolution } => Ok(Trained {
                policy: solve_grid_oracle(cfg, reports, *resolution)?,
                mu: None,
            }),
            Solver::Restricted(set) => Ok(Trained {
                policy: solve_restricted(cfg, reports, set)?.0,
                mu: None,
            }),
            Solver::ArgminRestricted(set) => Ok(Trained {
                policy: solve_restricted_argmin(cfg, reports, set)?.0,
                mu: None,
            }),
        }
    }

    /// Exact welfare maximizer over the whole simplex.
    pub fn is_exact(&self) -> bool {
        matches!(self, Solver::Exact | Solver::Bisection)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Solver::Exact => "exact",
            Solver::Bisection => "bisection",
            Solver::Grid { .. } => "grid",
            Solver::Restricted(_) => "restricted",
            Solver::ArgminRestricted(_) => "argmin_restricted",
        }
    }
}
