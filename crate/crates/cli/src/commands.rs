use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use rlhf_game::domain::{GameConfig, GroupType, Policy, RewardModel};
use rlhf_game::mechanism::{run_game, PaymentRule};
use rlhf_game::strategy::{epsilon_shift, Strategy};
use rlhf_game::training::{CandidateSet, Solver};
use rlhf_game::verify::{
    check_approx_dsic, check_cycle_monotonicity, check_dsic, check_ir, check_noise_asw,
    check_nonneg, check_payment_path, random_candidates, random_reward, trial_rng, CheckReport,
    CheckSettings, CycleInstance, InstanceSource, NoiseModel,
};
use rlhf_game::NormMode;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, SolverChoice, SynthSpec};
use crate::error::CliError;
use crate::output::{csv_writer, fmt_f64};

pub const SUITES: [&str; 7] = [
    "dsic",
    "ir",
    "approx-dsic",
    "noise-asw",
    "cycle",
    "payment-path",
    "nonneg",
];

/// Plays the configured game with truthful reports.
pub fn solve(cfg: &ExperimentConfig) -> Result<Vec<u8>, CliError> {
    let game = cfg.game()?;
    let groups = cfg.groups()?;
    let solver = cfg.solver()?;
    let rule = cfg.payment_rule()?;
    let out = run_game(game, groups, groups, &rule, &solver)?;
    let doc = json!({
        "solver": solver.name(),
        "payment": rule.name(),
        "policy": out.final_policy,
        "mu": out.mu,
        "asw": out.asw,
        "asw_minus": out.asw_minus,
        "valuations": out.valuations,
        "payments": out.payments,
        "utilities": out.utilities,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub group: usize,
    pub valuation: f64,
    pub payment: f64,
    pub utility: f64,
    /// Sum of all groups' valuations under their true types.
    pub social_welfare: f64,
}

/// Size-scaling (`alpha`) and blending (`beta`) sweeps for one group, all
/// others truthful. Rows come out in (parameter, value, group) order.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<u8>, CliError> {
    let game = cfg.game()?;
    let groups = cfg.groups()?;
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing \"sweep\" section".into()))?;
    spec.validate(groups.len())?;
    let solver = cfg.solver()?;
    let rule = cfg.payment_rule()?;
    let points: Vec<(&'static str, f64, Strategy)> = spec
        .alphas
        .iter()
        .map(|&a| ("alpha", a, Strategy::SizeScale(a)))
        .chain(spec.betas.iter().map(|&b| ("beta", b, Strategy::Blend(b))))
        .collect();
    let i = spec.group;
    let opponents: Vec<GroupType> = groups
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, g)| g.clone())
        .collect();
    let rows = points
        .par_iter()
        .map(|(name, value, strategy)| {
            let mut profile = groups.to_vec();
            profile[i] = strategy.apply(game, &groups[i], &opponents)?;
            let out = run_game(game, &profile, groups, &rule, &solver)?;
            let welfare: f64 = out.valuations.iter().sum();
            Ok((0..groups.len())
                .map(|g| SweepRow {
                    parameter: name,
                    value: *value,
                    group: g,
                    valuation: out.valuations[g],
                    payment: out.payments[g],
                    utility: out.utilities[g],
                    social_welfare: welfare,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut w = csv_writer();
    w.write_record([
        "parameter",
        "value",
        "group",
        "valuation",
        "payment",
        "utility",
        "social_welfare",
    ])
    .map_err(csv_err)?;
    for row in rows.iter().flatten() {
        w.write_record([
            row.parameter.to_string(),
            fmt_f64(row.value),
            row.group.to_string(),
            fmt_f64(row.valuation),
            fmt_f64(row.payment),
            fmt_f64(row.utility),
            fmt_f64(row.social_welfare),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Shifts by `eps`, or by just under the largest admissible amount when
/// `eps` would break non-negativity or normalization. Returns the report and
/// whether it was capped.
pub fn capped_shift(rm: &RewardModel, eps: f64) -> Result<(RewardModel, bool), CliError> {
    let (hi, lo) = (rm.argmax(), rm.argmin());
    let limit = match rm.mode() {
        NormMode::SumToOne => (1.0 - rm.values()[hi]).min(rm.values()[lo]),
        NormMode::MaxToOne => rm.values()[lo],
    };
    let capped = eps >= limit;
    let used = if capped { limit * (1.0 - 1e-9) } else { eps };
    Ok((epsilon_shift(rm, used)?, capped))
}

struct SynthSample {
    dv: Vec<f64>,
    du: Vec<f64>,
    capped: Vec<bool>,
}

fn synth_sample(spec: &SynthSpec, seed: u64, s: u64) -> Result<SynthSample, CliError> {
    let mut rng = trial_rng(seed, s);
    let groups: Vec<GroupType> = (0..spec.n)
        .map(|_| {
            GroupType::new(
                random_reward(spec.k, spec.mode, &mut rng),
                rng.random_range(1..=spec.w_max),
            )
        })
        .collect();
    let game = GameConfig::simple(
        Policy::uniform(spec.k),
        spec.divergence.clone(),
        spec.mode,
        spec.w_max,
    )?;
    let rule = PaymentRule::AffineMaximizer;
    let honest = run_game(&game, &groups, &groups, &rule, &Solver::Exact)?;
    let g = spec.group;
    let mut sample = SynthSample {
        dv: Vec::with_capacity(spec.epsilons.len()),
        du: Vec::with_capacity(spec.epsilons.len()),
        capped: Vec::with_capacity(spec.epsilons.len()),
    };
    for &eps in &spec.epsilons {
        let (rm, capped) = capped_shift(&groups[g].rm, eps)?;
        let mut profile = groups.clone();
        profile[g] = GroupType::new(rm, groups[g].w);
        let out = run_game(&game, &profile, &groups, &rule, &Solver::Exact)?;
        sample.dv.push(out.valuations[g] - honest.valuations[g]);
        sample.du.push(out.utilities[g] - honest.utilities[g]);
        sample.capped.push(capped);
    }
    Ok(sample)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and standard deviation of the deviating group's valuation and
/// utility change under an epsilon shift, per epsilon.
pub fn synth(cfg: &ExperimentConfig, samples_override: Option<usize>) -> Result<Vec<u8>, CliError> {
    let mut spec = cfg.synth.clone();
    if let Some(s) = samples_override {
        spec.samples = s;
    }
    if spec.n == 0 || spec.group >= spec.n || spec.k < 2 || spec.samples == 0 || spec.w_max == 0 {
        return Err(CliError::Config(
            "synth needs n >= 1, k >= 2, samples >= 1, w_max >= 1 and a valid group".into(),
        ));
    }
    if spec.epsilons.is_empty() || spec.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(CliError::Config(
            "synth epsilons must be finite, positive and non-empty".into(),
        ));
    }
    let samples = (0..spec.samples as u64)
        .into_par_iter()
        .map(|s| synth_sample(&spec, cfg.seed, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer();
    w.write_record([
        "epsilon",
        "samples",
        "capped_fraction",
        "mean_delta_valuation",
        "std_delta_valuation",
        "mean_delta_utility",
        "std_delta_utility",
    ])
    .map_err(csv_err)?;
    for (j, &eps) in spec.epsilons.iter().enumerate() {
        let (mv, sv) = mean_std(samples.iter().map(|s| s.dv[j]));
        let (mu, su) = mean_std(samples.iter().map(|s| s.du[j]));
        let capped = samples.iter().filter(|s| s.capped[j]).count() as f64 / samples.len() as f64;
        w.write_record([
            fmt_f64(eps),
            samples.len().to_string(),
            fmt_f64(capped),
            fmt_f64(mv),
            fmt_f64(sv),
            fmt_f64(mu),
            fmt_f64(su),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn default_trials(suite: &str) -> usize {
    match suite {
        "dsic" | "ir" | "nonneg" => 1000,
        "approx-dsic" | "noise-asw" => 100,
        _ => 20,
    }
}

fn default_tolerance(suite: &str) -> f64 {
    match suite {
        "dsic" | "ir" | "approx-dsic" => 1e-9,
        "nonneg" => 1e-10,
        "noise-asw" | "cycle" => 1e-8,
        _ => 0.0,
    }
}

/// The training rule for the cycle suite; restricted rules without explicit
/// candidates get a seeded random set.
fn cycle_solver(cfg: &ExperimentConfig) -> Result<Solver, CliError> {
    let needs_set = matches!(
        cfg.solver,
        SolverChoice::Restricted | SolverChoice::ArgminRestricted
    );
    if !needs_set || cfg.candidates.is_some() {
        return cfg.solver();
    }
    let mut rng = trial_rng(cfg.seed, u64::MAX);
    let set: CandidateSet = random_candidates(
        cfg.verify.cycle.k,
        cfg.verify.random_candidates.max(1),
        &mut rng,
    );
    Ok(match cfg.solver {
        SolverChoice::Restricted => Solver::Restricted(set),
        _ => Solver::ArgminRestricted(set),
    })
}

/// Runs one verification suite; `Ok` carries the report whether or not the
/// check passed.
pub fn verify(
    cfg: &ExperimentConfig,
    suite: &str,
    trials_override: Option<usize>,
) -> Result<CheckReport, CliError> {
    if !SUITES.contains(&suite) {
        return Err(CliError::Config(format!(
            "unknown suite {suite:?}; expected one of {}",
            SUITES.join(", ")
        )));
    }
    let v = &cfg.verify;
    let settings = CheckSettings {
        trials: trials_override
            .or(cfg.trials)
            .unwrap_or_else(|| default_trials(suite)),
        seed: cfg.seed,
        tolerance: v.tolerance.unwrap_or_else(|| default_tolerance(suite)),
    };
    let source: &dyn InstanceSource = if v.edge_family { &v.edge } else { &v.instances };
    let report = match suite {
        "dsic" => check_dsic(
            source,
            &cfg.payment_rule()?,
            &cfg.solver()?,
            v.deviations,
            &settings,
        )?,
        "ir" => check_ir(source, &cfg.payment_rule()?, &cfg.solver()?, &settings)?,
        "nonneg" => check_nonneg(source, &cfg.payment_rule()?, &cfg.solver()?, &settings)?,
        "approx-dsic" | "noise-asw" => {
            if v.noise_epsilons.is_empty() {
                return Err(CliError::Config("noise_epsilons must be non-empty".into()));
            }
            let mut combined: Option<CheckReport> = None;
            for &eps in &v.noise_epsilons {
                let noise =
                    NoiseModel::uniform_box(eps).map_err(|e| CliError::Config(e.to_string()))?;
                let rep = if suite == "approx-dsic" {
                    check_approx_dsic(
                        source,
                        &noise,
                        &cfg.payment_rule()?,
                        &cfg.solver()?,
                        v.deviations,
                        v.samples,
                        &settings,
                    )?
                } else {
                    check_noise_asw(
                        source,
                        &noise,
                        &cfg.solver()?,
                        v.draws,
                        v.adversarial,
                        &settings,
                    )?
                };
                combined = Some(merge(combined, rep, eps));
            }
            combined.expect("at least one epsilon")
        }
        "cycle" => {
            let instances = (0..settings.trials as u64)
                .map(|t| v.cycle.sample(&mut trial_rng(cfg.seed, t)))
                .collect::<Result<Vec<CycleInstance>, _>>()
                .map_err(|e| CliError::Config(e.to_string()))?;
            check_cycle_monotonicity(
                &instances,
                &cycle_solver(cfg)?,
                v.max_cycle_len,
                v.sampled_cycles,
                &settings,
            )?
        }
        "payment-path" => check_payment_path(&v.path, &v.path_steps, v.path_bound, &settings)?,
        _ => unreachable!("suite validated above"),
    };
    Ok(report)
}

fn merge(acc: Option<CheckReport>, mut next: CheckReport, eps: f64) -> CheckReport {
    if let serde_json::Value::Object(map) = &mut next.worst_instance {
        map.insert("epsilon".into(), json!(eps));
    }
    match acc {
        None => next,
        Some(mut acc) => {
            acc.trials += next.trials;
            if next.max_violation > acc.max_violation {
                acc.max_violation = next.max_violation;
                acc.worst_instance = next.worst_instance;
            }
            acc.passed = acc.passed && next.passed;
            acc
        }
    }
}

pub fn write_out(bytes: &[u8], out: Option<&std::path::Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}
