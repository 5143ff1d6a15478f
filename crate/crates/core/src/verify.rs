//! Randomized certification suites for the mechanism's guarantees.
//!
//! Every check draws trial `j` from `ChaCha8Rng` seeded with the master seed
//! on stream `j`, runs trials in parallel, and reduces them in trial order,
//! so reports are identical for any number of worker threads.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::divergence::DivergenceSpec;
use crate::domain::{asw, valuation, GameConfig, GroupType, NormMode, Policy, RewardModel};
use crate::error::{GameError, Result};
use crate::mechanism::{run_game, PaymentRule};
use crate::strategy::{blend, epsilon_shift, size_scale};
use crate::training::{CandidateSet, Solver};

/// The RNG for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: String,
    pub trials: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Enough to replay the worst trial.
    pub worst_instance: Value,
}

impl CheckReport {
    fn from_trials(suite: &str, tolerance: f64, results: Vec<(f64, Value)>) -> Self {
        let trials = results.len();
        let mut worst = (f64::NEG_INFINITY, Value::Null);
        for (violation, instance) in results {
            // NaN counts as the worst possible outcome
            if violation.is_nan() || violation > worst.0 {
                let nan = violation.is_nan();
                worst = (if nan { f64::INFINITY } else { violation }, instance);
            }
        }
        Self {
            suite: suite.to_string(),
            trials,
            max_violation: worst.0,
            tolerance,
            passed: worst.0 <= tolerance,
            worst_instance: worst.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
}

/// A game configuration plus one report per group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instance {
    pub cfg: GameConfig,
    pub groups: Vec<GroupType>,
}

pub trait InstanceSource: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Instance;
}

/// Random reward vector: i.i.d. U[0, 1] entries, normalized per `mode`.
pub fn random_reward(k: usize, mode: NormMode, rng: &mut impl Rng) -> RewardModel {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let scale = mode.statistic(&raw);
        if scale > 0.0 {
            if let Ok(rm) = RewardModel::new(raw.into_iter().map(|v| v / scale).collect(), mode) {
                return rm;
            }
        }
    }
}

/// Random strictly positive policy with entries bounded away from zero.
pub fn random_policy(k: usize, rng: &mut impl Rng) -> Policy {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    Policy::normalized(raw).expect("positive entries")
}

/// Uniformly drawn games over the listed shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomInstances {
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub divergences: Vec<DivergenceSpec>,
    pub modes: Vec<NormMode>,
    pub w_bar: u32,
    /// Draw a random initial policy instead of the uniform one.
    pub random_initial: bool,
}

impl Default for RandomInstances {
    fn default() -> Self {
        Self {
            ks: vec![2, 3, 4],
            ns: vec![1, 2, 3],
            divergences: [0.5, 1.0, 2.0]
                .iter()
                .map(|&l| DivergenceSpec::kl(l).expect("positive lambda"))
                .collect(),
            modes: vec![NormMode::SumToOne, NormMode::MaxToOne],
            w_bar: 10,
            random_initial: true,
        }
    }
}

impl InstanceSource for RandomInstances {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Instance {
        let k = *self.ks.choose(rng).expect("non-empty ks");
        let n = *self.ns.choose(rng).expect("non-empty ns");
        let spec = self
            .divergences
            .choose(rng)
            .expect("non-empty divergences")
            .clone();
        let mode = *self.modes.choose(rng).expect("non-empty modes");
        let initial = if self.random_initial {
            random_policy(k, rng)
        } else {
            Policy::uniform(k)
        };
        let cfg = GameConfig::simple(initial, spec, mode, self.w_bar).expect("consistent shapes");
        let groups = (0..n)
            .map(|_| {
                GroupType::new(
                    random_reward(k, mode, rng),
                    rng.random_range(1..=self.w_bar),
                )
            })
            .collect();
        Instance { cfg, groups }
    }
}

/// Two groups with opposed preferences over two outcomes, the first of which
/// the initial policy almost never plays: `pi_0 = (e, 1 - e)` with `e` drawn
/// from `[e_min, e_max]`. The group favouring the rare outcome gets utility
/// of order `e`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeFamily {
    pub e_min: f64,
    pub e_max: f64,
    pub w_bar: u32,
    pub divergence: DivergenceSpec,
}

impl Default for EdgeFamily {
    fn default() -> Self {
        Self {
            e_min: 1e-3,
            e_max: 0.05,
            w_bar: 10,
            divergence: DivergenceSpec::kl(1.0).expect("positive lambda"),
        }
    }
}

impl InstanceSource for EdgeFamily {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Instance {
        let e = rng.random_range(self.e_min..=self.e_max);
        let initial = Policy::new(vec![e, 1.0 - e]).expect("interior edge policy");
        let cfg = GameConfig::simple(
            initial,
            self.divergence.clone(),
            NormMode::MaxToOne,
            self.w_bar,
        )
        .expect("valid");
        let rare = RewardModel::new(vec![1.0, 0.0], NormMode::MaxToOne).expect("valid");
        let common = RewardModel::new(vec![0.0, 1.0], NormMode::MaxToOne).expect("valid");
        // the rare-outcome group stays small so the common group dominates
        let groups = vec![
            GroupType::new(rare, 1),
            GroupType::new(common, rng.random_range(1..=self.w_bar)),
        ];
        Instance { cfg, groups }
    }
}

/// A random unilateral deviation for a group of type `truth`: a fresh reward
/// model and size, a size change, an epsilon shift, or a blend.
pub fn random_deviation(
    cfg: &GameConfig,
    truth: &GroupType,
    opponents: &[GroupType],
    rng: &mut impl Rng,
) -> GroupType {
    let k = cfg.k();
    let mode = truth.rm.mode();
    let fresh = |rng: &mut _| GroupType::new(random_reward(k, mode, rng), truth.w);
    match rng.random_range(0..5) {
        0 => GroupType::new(
            random_reward(k, mode, rng),
            rng.random_range(1..=cfg.w_bar()),
        ),
        1 => size_scale(truth, rng.random_range(0.1..4.0), cfg.w_bar()),
        2 => {
            let eps = rng.random_range(0.001..0.2);
            match epsilon_shift(&truth.rm, eps) {
                Ok(rm) => GroupType::new(rm, truth.w),
                Err(_) => fresh(rng),
            }
        }
        3 if !opponents.is_empty() => {
            let beta = rng.random_range(-1.0..3.0);
            match blend(&truth.rm, opponents, beta, mode) {
                Ok(rm) => GroupType::new(rm, truth.w),
                Err(_) => fresh(rng),
            }
        }
        _ => fresh(rng),
    }
}

fn others(groups: &[GroupType], i: usize) -> Vec<GroupType> {
    groups
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, g)| g.clone())
        .collect()
}

fn run_trials<F>(settings: &CheckSettings, f: F) -> Result<Vec<(f64, Value)>>
where
    F: Fn(u64, &mut ChaCha8Rng) -> Result<(f64, Value)> + Sync,
{
    (0..settings.trials as u64)
        .into_par_iter()
        .map(|t| f(t, &mut trial_rng(settings.seed, t)))
        .collect()
}

/// Largest utility gain from a random unilateral deviation:
/// `deviations` draws per trial, each for a uniformly chosen group.
pub fn check_dsic(
    source: &dyn InstanceSource,
    rule: &PaymentRule,
    solver: &Solver,
    deviations: usize,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let results = run_trials(settings, |trial, rng| {
        let inst = source.sample(rng);
        let honest = run_game(&inst.cfg, &inst.groups, &inst.groups, rule, solver)?;
        let mut worst = (f64::NEG_INFINITY, Value::Null);
        for _ in 0..deviations {
            let i = rng.random_range(0..inst.groups.len());
            let report =
                random_deviation(&inst.cfg, &inst.groups[i], &others(&inst.groups, i), rng);
            let mut profile = inst.groups.clone();
            profile[i] = report.clone();
            let out = run_game(&inst.cfg, &profile, &inst.groups, rule, solver)?;
            let gain = out.utilities[i] - honest.utilities[i];
            if gain > worst.0 {
                worst = (
                    gain,
                    json!({ "trial": trial, "instance": inst, "group": i, "deviation": report, "gain": gain }),
                );
            }
        }
        Ok(worst)
    })?;
    Ok(CheckReport::from_trials(
        "dsic",
        settings.tolerance,
        results,
    ))
}

/// Largest negative truthful utility.
pub fn check_ir(
    source: &dyn InstanceSource,
    rule: &PaymentRule,
    solver: &Solver,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let results = run_trials(settings, |trial, rng| {
        let inst = source.sample(rng);
        let out = run_game(&inst.cfg, &inst.groups, &inst.groups, rule, solver)?;
        let (i, u) = min_entry(&out.utilities);
        Ok((
            -u,
            json!({ "trial": trial, "instance": inst, "group": i, "utility": u }),
        ))
    })?;
    Ok(CheckReport::from_trials("ir", settings.tolerance, results))
}

/// Largest negative payment under truthful reports.
pub fn check_nonneg(
    source: &dyn InstanceSource,
    rule: &PaymentRule,
    solver: &Solver,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let results = run_trials(settings, |trial, rng| {
        let inst = source.sample(rng);
        let out = run_game(&inst.cfg, &inst.groups, &inst.groups, rule, solver)?;
        let (i, p) = min_entry(&out.payments);
        Ok((
            -p,
            json!({ "trial": trial, "instance": inst, "group": i, "payment": p }),
        ))
    })?;
    Ok(CheckReport::from_trials(
        "nonneg",
        settings.tolerance,
        results,
    ))
}

fn min_entry(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (j, v)| if v < best.1 { (j, v) } else { best },
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// I.i.d. uniform on `[-epsilon, epsilon]` per coordinate.
    #[default]
    UniformBox,
}

/// Sup-norm-bounded perturbation of reported reward models. Draws are
/// clamped at zero and NOT renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub epsilon: f64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

impl NoiseModel {
    pub fn uniform_box(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(GameError::InvalidConfig(format!(
                "noise epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            distribution: NoiseDistribution::UniformBox,
        })
    }

    /// One `[-1, 1]` draw per coordinate.
    pub fn draw(&self, k: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self.distribution {
            NoiseDistribution::UniformBox => (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }

    /// `max(0, rm + epsilon * u)`.
    pub fn apply(&self, rm: &RewardModel, u: &[f64]) -> RewardModel {
        let values = rm
            .values()
            .iter()
            .zip(u)
            .map(|(&v, &z)| (v + self.epsilon * z).max(0.0))
            .collect();
        RewardModel::unnormalized(values, rm.mode()).expect("clamped entries are non-negative")
    }

    fn apply_all(&self, groups: &[GroupType], draws: &[Vec<f64>]) -> Vec<GroupType> {
        groups
            .iter()
            .zip(draws)
            .map(|(g, u)| GroupType::new(self.apply(&g.rm, u), g.w))
            .collect()
    }
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Expected gain from misreporting when every report passes through
/// `noise`, against the bound `2 w_i epsilon` plus three standard errors.
/// Every group of every instance is tested with `deviations` random
/// misreports; both arms of a comparison share the noise draws.
pub fn check_approx_dsic(
    source: &dyn InstanceSource,
    noise: &NoiseModel,
    rule: &PaymentRule,
    solver: &Solver,
    deviations: usize,
    samples: usize,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let results = run_trials(settings, |trial, rng| {
        let inst = source.sample(rng);
        let (cfg, groups) = (&inst.cfg, &inst.groups);
        let mut worst = (f64::NEG_INFINITY, Value::Null);
        for i in 0..groups.len() {
            for _ in 0..deviations {
                let report = random_deviation(cfg, &groups[i], &others(groups, i), rng);
                let mut gains = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let draws: Vec<Vec<f64>> =
                        groups.iter().map(|_| noise.draw(cfg.k(), rng)).collect();
                    let honest = noise.apply_all(groups, &draws);
                    let mut deviated = honest.clone();
                    deviated[i] = GroupType::new(noise.apply(&report.rm, &draws[i]), report.w);
                    let a = run_game(cfg, &honest, groups, rule, solver)?;
                    let b = run_game(cfg, &deviated, groups, rule, solver)?;
                    gains.push(b.utilities[i] - a.utilities[i]);
                }
                let (mean, se) = mean_and_se(&gains);
                let bound = 2.0 * f64::from(groups[i].w) * noise.epsilon + 3.0 * se;
                let violation = mean - bound;
                if violation > worst.0 {
                    worst = (
                        violation,
                        json!({ "trial": trial, "instance": inst, "group": i, "deviation": report,
                                "mean_gain": mean, "standard_error": se, "bound": bound }),
                    );
                }
            }
        }
        Ok(worst)
    })?;
    Ok(CheckReport::from_trials(
        "approx-dsic",
        settings.tolerance,
        results,
    ))
}

/// Welfare lost (under the true reports) by training on noisy reports,
/// beyond `2 epsilon sum_i w_i`. Runs `draws` random draws per instance and,
/// when `adversarial` is set and `n * K <= 9`, every `+-epsilon` sign pattern.
pub fn check_noise_asw(
    source: &dyn InstanceSource,
    noise: &NoiseModel,
    solver: &Solver,
    draws: usize,
    adversarial: bool,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let results = run_trials(settings, |trial, rng| {
        let inst = source.sample(rng);
        let (cfg, groups) = (&inst.cfg, &inst.groups);
        let best = asw(&solver.train(cfg, groups)?.policy, groups, cfg)?;
        let budget = 2.0 * noise.epsilon * groups.iter().map(|g| f64::from(g.w)).sum::<f64>();
        let k = cfg.k();
        let mut patterns: Vec<Vec<Vec<f64>>> = (0..draws)
            .map(|_| groups.iter().map(|_| noise.draw(k, rng)).collect())
            .collect();
        let coords = groups.len() * k;
        if adversarial && coords <= 9 {
            for mask in 0u32..(1 << coords) {
                let flat: Vec<f64> = (0..coords)
                    .map(|b| if mask >> b & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                patterns.push(flat.chunks(k).map(<[f64]>::to_vec).collect());
            }
        }
        let mut worst = (f64::NEG_INFINITY, Value::Null);
        for u in &patterns {
            let noisy = noise.apply_all(groups, u);
            let shortfall = best - asw(&solver.train(cfg, &noisy)?.policy, groups, cfg)?;
            if shortfall - budget > worst.0 {
                worst = (
                    shortfall - budget,
                    json!({ "trial": trial, "instance": inst, "noisy_reports": noisy, "shortfall": shortfall, "budget": budget }),
                );
            }
        }
        Ok(worst)
    })?;
    Ok(CheckReport::from_trials(
        "noise-asw",
        settings.tolerance,
        results,
    ))
}

/// One group's type space (a finite grid) against fixed opponents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleInstance {
    pub cfg: GameConfig,
    pub opponents: Vec<GroupType>,
    pub grid: Vec<GroupType>,
}

/// `rewards` random reward models crossed with `sizes`.
pub fn type_grid(
    k: usize,
    mode: NormMode,
    rewards: usize,
    sizes: &[u32],
    rng: &mut impl Rng,
) -> Vec<GroupType> {
    let rms: Vec<RewardModel> = (0..rewards).map(|_| random_reward(k, mode, rng)).collect();
    rms.iter()
        .flat_map(|rm| sizes.iter().map(move |&w| GroupType::new(rm.clone(), w)))
        .collect()
}

/// Random single-group type grids against random opponents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleSampler {
    pub k: usize,
    pub mode: NormMode,
    /// Reward models in the grid; the grid has `rewards * sizes.len()` types.
    pub rewards: usize,
    pub sizes: Vec<u32>,
    pub opponents: Vec<usize>,
    pub divergences: Vec<DivergenceSpec>,
}

impl Default for CycleSampler {
    fn default() -> Self {
        Self {
            k: 3,
            mode: NormMode::SumToOne,
            rewards: 16,
            sizes: vec![1, 2, 3, 5],
            opponents: vec![0, 1, 2],
            divergences: vec![
                DivergenceSpec::kl(1.0).expect("positive"),
                DivergenceSpec::chi_squared(1.0).expect("positive"),
            ],
        }
    }
}

impl CycleSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<CycleInstance> {
        let w_bar = self.sizes.iter().copied().max().unwrap_or(1);
        let spec = self
            .divergences
            .choose(rng)
            .ok_or_else(|| GameError::InvalidConfig("no divergences to sample".into()))?
            .clone();
        let cfg = GameConfig::simple(random_policy(self.k, rng), spec, self.mode, w_bar)?;
        let n = *self.opponents.choose(rng).unwrap_or(&0);
        let opponents = (0..n)
            .map(|_| {
                GroupType::new(
                    random_reward(self.k, self.mode, rng),
                    rng.random_range(1..=w_bar),
                )
            })
            .collect();
        let grid = type_grid(self.k, self.mode, self.rewards, &self.sizes, rng);
        Ok(CycleInstance {
            cfg,
            opponents,
            grid,
        })
    }
}

/// Edge weights `e[a][b] = l(a, b) = w_b v(psi(b); rm_b) - w_b v(psi(a); rm_b)`:
/// what type `b` gives up by reporting `a`, ignoring payments.
fn gain_matrix(inst: &CycleInstance, solver: &Solver) -> Result<Vec<Vec<f64>>> {
    let policies = inst
        .grid
        .iter()
        .map(|t| {
            let mut profile = vec![t.clone()];
            profile.extend(inst.opponents.iter().cloned());
            Ok(solver.train(&inst.cfg, &profile)?.policy)
        })
        .collect::<Result<Vec<Policy>>>()?;
    let g = inst.grid.len();
    let mut value = vec![vec![0.0; g]; g];
    for (b, t) in inst.grid.iter().enumerate() {
        for (a, p) in policies.iter().enumerate() {
            value[b][a] = f64::from(t.w) * valuation(p, &t.rm)?;
        }
    }
    Ok((0..g)
        .map(|a| (0..g).map(|b| value[b][b] - value[b][a]).collect())
        .collect())
}

fn cycle_sum(e: &[Vec<f64>], cycle: &[usize]) -> f64 {
    (0..cycle.len())
        .map(|j| e[cycle[j]][cycle[(j + 1) % cycle.len()]])
        .sum()
}

/// Most negative closed walk of length `2..=max_len` by min-plus powers of
/// the edge matrix.
fn min_closed_walk(e: &[Vec<f64>], max_len: usize) -> (f64, Vec<usize>) {
    let g = e.len();
    // best[a][b]: cheapest walk a -> b with the current number of edges
    let mut best: Vec<Vec<f64>> = e.to_vec();
    let mut paths: Vec<Vec<Vec<usize>>> = (0..g)
        .map(|a| (0..g).map(|b| vec![a, b]).collect())
        .collect();
    let mut worst = (f64::INFINITY, Vec::new());
    for _ in 2..=max_len {
        let mut next = vec![vec![f64::INFINITY; g]; g];
        let mut next_paths = vec![vec![(0usize, 0usize); g]; g];
        for a in 0..g {
            for mid in 0..g {
                let head = best[a][mid];
                for b in 0..g {
                    let cand = head + e[mid][b];
                    if cand < next[a][b] {
                        next[a][b] = cand;
                        next_paths[a][b] = (mid, b);
                    }
                }
            }
        }
        let mut grown = vec![vec![Vec::new(); g]; g];
        for a in 0..g {
            for b in 0..g {
                let (mid, end) = next_paths[a][b];
                let mut p: Vec<usize> = paths[a][mid].clone();
                p.push(end);
                grown[a][b] = p;
            }
        }
        for a in 0..g {
            if next[a][a] < worst.0 {
                let mut cycle = grown[a][a].clone();
                cycle.pop();
                worst = (next[a][a], cycle);
            }
        }
        best = next;
        paths = grown;
    }
    worst
}

/// Most negative cycle sum `sum_j l(t^j, t^{j+1})` per instance: every
/// 2-cycle, `sampled` random cycles of length `2..=max_len`, and an exact
/// min-plus search over closed walks up to `max_len`.
pub fn check_cycle_monotonicity(
    instances: &[CycleInstance],
    solver: &Solver,
    max_len: usize,
    sampled: usize,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    if max_len < 2 {
        return Err(GameError::InvalidConfig(
            "cycle length must be at least 2".into(),
        ));
    }
    let results = instances
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| {
            let e = gain_matrix(inst, solver)?;
            let g = e.len();
            let mut worst = (f64::INFINITY, Vec::new());
            let mut offer = |sum: f64, cycle: Vec<usize>| {
                if sum < worst.0 {
                    worst = (sum, cycle);
                }
            };
            #[allow(clippy::needless_range_loop)]
            for a in 0..g {
                for b in a..g {
                    offer(e[a][b] + e[b][a], vec![a, b]);
                }
            }
            let mut rng = trial_rng(settings.seed, idx as u64);
            for _ in 0..sampled {
                let len = rng.random_range(2..=max_len);
                let cycle: Vec<usize> = (0..len).map(|_| rng.random_range(0..g)).collect();
                offer(cycle_sum(&e, &cycle), cycle);
            }
            let (sum, cycle) = min_closed_walk(&e, max_len);
            offer(sum, cycle);
            let types: Vec<&GroupType> = worst.1.iter().map(|&j| &inst.grid[j]).collect();
            Ok((
                -worst.0,
                json!({ "instance_index": idx, "cycle": worst.1, "types": types, "sum": worst.0 }),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport::from_trials(
        "cycle",
        settings.tolerance,
        results,
    ))
}

/// Reward models along the size-switching path from `t` to `t_prime`.
fn payment_path(t: &GroupType, t_prime: &GroupType, steps: usize) -> Result<Vec<GroupType>> {
    let mode = t.rm.mode();
    let k = t.rm.len();
    let lerp = |a: &[f64], b: &[f64], j: usize| -> Result<RewardModel> {
        let s = j as f64 / steps as f64;
        RewardModel::unnormalized(
            a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect(),
            mode,
        )
    };
    let (a, b) = (t.rm.values(), t_prime.rm.values());
    if t.w == t_prime.w {
        return (0..=steps)
            .map(|j| Ok(GroupType::new(lerp(a, b, j)?, t.w)))
            .collect();
    }
    let star = mode.uniform(k);
    let mut path = (0..=steps)
        .map(|j| Ok(GroupType::new(lerp(a, star.values(), j)?, t.w)))
        .collect::<Result<Vec<_>>>()?;
    for j in 0..=steps {
        path.push(GroupType::new(lerp(star.values(), b, j)?, t_prime.w));
    }
    Ok(path)
}

/// Sums of `l` along the path `t -> ... -> rm* -> ... -> t'` (sizes switch at
/// the uniform reward model) and along its reverse, for a group facing
/// `opponents`. Their sum shrinks toward zero as `steps` grows.
pub fn estimate_payment_path(
    cfg: &GameConfig,
    opponents: &[GroupType],
    t: &GroupType,
    t_prime: &GroupType,
    steps: usize,
) -> Result<(f64, f64)> {
    if steps == 0 {
        return Err(GameError::InvalidConfig(
            "path needs at least one step".into(),
        ));
    }
    let path = payment_path(t, t_prime, steps)?;
    let policies = path
        .iter()
        .map(|node| {
            let mut profile = vec![node.clone()];
            profile.extend(opponents.iter().cloned());
            Ok(Solver::Exact.train(cfg, &profile)?.policy)
        })
        .collect::<Result<Vec<_>>>()?;
    let value = |who: usize, at: usize| -> Result<f64> {
        Ok(f64::from(path[who].w) * valuation(&policies[at], &path[who].rm)?)
    };
    let (mut forward, mut backward) = (0.0, 0.0);
    for j in 0..path.len() - 1 {
        // l(t^j, t^{j+1}): type t^{j+1} compared with reporting t^j
        forward += value(j + 1, j + 1)? - value(j + 1, j)?;
        backward += value(j, j)? - value(j, j + 1)?;
    }
    Ok((forward, backward))
}

/// Endpoint pairs for the payment-path check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSampler {
    pub ks: Vec<usize>,
    pub opponents: Vec<usize>,
    pub divergences: Vec<DivergenceSpec>,
    pub mode: NormMode,
    pub w_bar: u32,
}

impl Default for PathSampler {
    // |forward + backward| ~ w^2 Var_pi(rm' - rm) / (lambda m): sizes <= 2
    // and lambda = 8 keep it below 0.016 at m = 32
    fn default() -> Self {
        Self {
            ks: vec![2, 3],
            opponents: vec![0, 1, 2],
            divergences: vec![
                DivergenceSpec::kl(8.0).expect("positive"),
                DivergenceSpec::chi_squared(8.0).expect("positive"),
            ],
            mode: NormMode::MaxToOne,
            w_bar: 2,
        }
    }
}

/// For each sampled endpoint pair, checks that `|forward + backward|`
/// strictly decreases through `steps` and ends at most `bound`. The
/// violation is the larger of the biggest step-to-step increase (zero
/// counts as a failure to decrease) and the final excess over `bound`.
pub fn check_payment_path(
    sampler: &PathSampler,
    steps: &[usize],
    bound: f64,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    if steps.is_empty() {
        return Err(GameError::InvalidConfig("no step counts given".into()));
    }
    let results = run_trials(settings, |trial, rng| {
        let k = *sampler.ks.choose(rng).expect("non-empty ks");
        let n = *sampler.opponents.choose(rng).expect("non-empty opponents");
        let spec = sampler
            .divergences
            .choose(rng)
            .expect("non-empty divergences")
            .clone();
        let cfg = GameConfig::simple(random_policy(k, rng), spec, sampler.mode, sampler.w_bar)?;
        let draw = |rng: &mut ChaCha8Rng| {
            GroupType::new(
                random_reward(k, sampler.mode, rng),
                rng.random_range(1..=sampler.w_bar),
            )
        };
        let opponents: Vec<GroupType> = (0..n).map(|_| draw(rng)).collect();
        let (t, t_prime) = (draw(rng), draw(rng));
        let gaps = steps
            .iter()
            .map(|&m| {
                let (f, b) = estimate_payment_path(&cfg, &opponents, &t, &t_prime, m)?;
                Ok((f + b).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut violation = gaps.last().copied().unwrap_or(0.0) - bound;
        for pair in gaps.windows(2) {
            let rise = pair[1] - pair[0];
            violation = violation.max(if rise >= 0.0 {
                rise.max(f64::MIN_POSITIVE)
            } else {
                rise
            });
        }
        Ok((
            violation,
            json!({ "trial": trial, "cfg": cfg, "opponents": opponents, "t": t, "t_prime": t_prime, "steps": steps, "gaps": gaps }),
        ))
    })?;
    Ok(CheckReport::from_trials(
        "payment-path",
        settings.tolerance,
        results,
    ))
}

/// Random candidate policies over `k` outcomes, plus the uniform one.
pub fn random_candidates(k: usize, count: usize, rng: &mut impl Rng) -> CandidateSet {
    let mut policies = vec![Policy::uniform(k)];
    policies.extend((1..count).map(|_| random_policy(k, rng)));
    CandidateSet::new(policies).expect("non-empty")
}
