//! Acceptance criteria, one PASS/FAIL line each. Runs with a custom harness
//! so the lines are printed even when everything passes.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use rlhf_game::divergence::DivergenceSpec;
use rlhf_game::domain::{asw, valuation, GameConfig, GroupType, NormMode};
use rlhf_game::mechanism::{run_game, PaymentRule};
use rlhf_game::strategy::{t_deviation, t_function};
use rlhf_game::training::{
    aggregate, kkt_residual, solve_chi2, solve_exact, solve_generic, solve_grid_oracle, solve_kl,
    AggregateReward, Solver,
};
use rlhf_game::verify::{
    check_approx_dsic, check_cycle_monotonicity, check_dsic, check_ir, check_noise_asw,
    check_nonneg, check_payment_path, random_candidates, random_policy, random_reward, trial_rng,
    CheckReport, CheckSettings, CycleSampler, InstanceSource, NoiseModel, PathSampler,
    RandomInstances,
};

const SEED: u64 = 2024;

// pinned tolerances
const SOLVER_AGREEMENT: f64 = 1e-8;
const ORACLE_SLACK: f64 = 1e-6;
const ORACLE_RESOLUTION: f64 = 1e-4;
const ORACLE_BUDGET_SECS: f64 = 60.0;
const KKT_TOL: f64 = 1e-8;
const DSIC_TOL: f64 = 1e-9;
const CONTROL_MIN_VIOLATION: f64 = 1e-4;
const IR_TOL: f64 = 1e-9;
const NONNEG_TOL: f64 = 1e-10;
const NEUTRAL_POLICY_TOL: f64 = 1e-12;
const NEUTRAL_PAYMENT_TOL: f64 = 1e-10;
const SYNTH_BUDGET_SECS: f64 = 300.0;
const APPROX_TOL: f64 = 0.0;
const NOISE_TOL: f64 = 1e-8;
const CYCLE_TOL: f64 = 1e-8;
const PATH_BOUND: f64 = 0.02;
// utilities on a flat stretch of the grid differ only by rounding
const SWEEP_TIE_TOL: f64 = 1e-9;
const T_THRESHOLD: f64 = 0.01;
const T_DELTA: f64 = 1e-4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rlhf-game")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run_bin(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(bin()).args(args).output().map_err(err)?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_instances() -> RandomInstances {
    let mut divergences = Vec::new();
    for l in [0.5, 1.0, 2.0] {
        divergences.push(DivergenceSpec::kl(l).unwrap());
        divergences.push(DivergenceSpec::chi_squared(l).unwrap());
    }
    RandomInstances {
        ks: vec![2, 3],
        ns: vec![1, 2, 3],
        divergences,
        ..RandomInstances::default()
    }
}

fn closed_form(cfg: &GameConfig, groups: &[GroupType]) -> Result<Vec<f64>, String> {
    let res = match cfg.divergence().kind().name() {
        "kl" => solve_kl(cfg, groups),
        _ => solve_chi2(cfg, groups),
    };
    Ok(res.map_err(err)?.policy.probs().to_vec())
}

fn criterion_1() -> Outcome {
    let source = oracle_instances();
    let start = Instant::now();
    let (mut disagreement, mut shortfall) = (0.0f64, f64::NEG_INFINITY);
    for t in 0..200 {
        let inst = source.sample(&mut trial_rng(SEED, t));
        let (cfg, groups) = (&inst.cfg, &inst.groups);
        let closed = closed_form(cfg, groups)?;
        let generic = solve_generic(cfg, groups).map_err(err)?;
        disagreement = disagreement.max(sup(&closed, generic.policy.probs()));
        let exact = solve_exact(cfg, groups).map_err(err)?.policy;
        let grid = solve_grid_oracle(cfg, groups, ORACLE_RESOLUTION).map_err(err)?;
        let gap = asw(&grid, groups, cfg).map_err(err)? - asw(&exact, groups, cfg).map_err(err)?;
        shortfall = shortfall.max(gap);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        disagreement <= SOLVER_AGREEMENT && shortfall <= ORACLE_SLACK && secs <= ORACLE_BUDGET_SECS,
        format!("max sup-norm disagreement {disagreement:.2e}, max oracle excess {shortfall:.2e}, {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let source = RandomInstances {
        divergences: oracle_instances().divergences,
        ..RandomInstances::default()
    };
    let (mut worst, mut checked) = (0.0f64, 0);
    for t in 0..1000 {
        let inst = source.sample(&mut trial_rng(SEED + 1, t));
        let r: AggregateReward = aggregate(inst.cfg.k(), &inst.groups).map_err(err)?;
        let res = solve_exact(&inst.cfg, &inst.groups).map_err(err)?;
        if res.has_full_support() {
            worst = worst.max(kkt_residual(&inst.cfg, &r, &res));
            checked += 1;
        }
    }
    ensure(
        checked > 0 && worst <= KKT_TOL,
        format!("{checked} full-support outputs, max residual {worst:.2e}"),
    )
}

fn settings(trials: usize, seed: u64, tolerance: f64) -> CheckSettings {
    CheckSettings {
        trials,
        seed,
        tolerance,
    }
}

fn criterion_3() -> Outcome {
    let source = RandomInstances::default();
    let s = settings(1000, SEED + 3, DSIC_TOL);
    let aff = check_dsic(
        &source,
        &PaymentRule::AffineMaximizer,
        &Solver::Exact,
        20,
        &s,
    )
    .map_err(err)?;
    let zero = check_dsic(&source, &PaymentRule::Zero, &Solver::Exact, 20, &s).map_err(err)?;
    ensure(
        aff.passed && zero.max_violation > CONTROL_MIN_VIOLATION,
        format!(
            "affine max gain {:.2e}, zero-payment control max gain {:.2e}",
            aff.max_violation, zero.max_violation
        ),
    )
}

fn criterion_4() -> Outcome {
    let source = RandomInstances::default();
    let ir = check_ir(
        &source,
        &PaymentRule::AffineMaximizer,
        &Solver::Exact,
        &settings(1000, SEED + 3, IR_TOL),
    )
    .map_err(err)?;
    let nonneg = check_nonneg(
        &source,
        &PaymentRule::AffineMaximizer,
        &Solver::Exact,
        &settings(1000, SEED + 3, NONNEG_TOL),
    )
    .map_err(err)?;
    ensure(
        ir.passed && nonneg.passed,
        format!(
            "min utility {:.2e}, min payment {:.2e}",
            -ir.max_violation, -nonneg.max_violation
        ),
    )
}

fn criterion_5() -> Outcome {
    let (mut policy_spread, mut payment) = (0.0f64, 0.0f64);
    for t in 0..100 {
        let mut rng = trial_rng(SEED + 5, t);
        let k = rng.random_range(2..=4);
        let mode = *[NormMode::SumToOne, NormMode::MaxToOne]
            .choose(&mut rng)
            .unwrap();
        let spec = if rng.random_bool(0.5) {
            DivergenceSpec::kl(1.0)
        } else {
            DivergenceSpec::chi_squared(1.0)
        }
        .map_err(err)?;
        let w_bar = 10;
        let cfg = GameConfig::simple(random_policy(k, &mut rng), spec, mode, w_bar).map_err(err)?;
        let n_others = rng.random_range(0..=2);
        let others: Vec<GroupType> = (0..n_others)
            .map(|_| {
                GroupType::new(
                    random_reward(k, mode, &mut rng),
                    rng.random_range(1..=w_bar),
                )
            })
            .collect();
        let mut reference: Option<Vec<f64>> = None;
        for w in 1..=w_bar {
            let mut profile = vec![GroupType::new(mode.uniform(k), w)];
            profile.extend(others.iter().cloned());
            let out = run_game(
                &cfg,
                &profile,
                &profile,
                &PaymentRule::AffineMaximizer,
                &Solver::Exact,
            )
            .map_err(err)?;
            let probs = out.final_policy.probs().to_vec();
            if let Some(r) = &reference {
                policy_spread = policy_spread.max(sup(r, &probs));
            } else {
                reference = Some(probs);
            }
            payment = payment.max(out.payments[0].abs());
        }
    }
    ensure(
        policy_spread <= NEUTRAL_POLICY_TOL && payment <= NEUTRAL_PAYMENT_TOL,
        format!("policy spread over sizes {policy_spread:.2e}, max |payment| {payment:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (code, stdout) = run_bin(&["synth", "--seed", "1"])?;
    let secs = start.elapsed().as_secs_f64();
    if code != 0 {
        return Err(format!("synth exited with {code}"));
    }
    let mut reader = csv::Reader::from_reader(stdout.as_slice());
    let headers = reader.headers().map_err(err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(format!("missing column {name}"))
    };
    let (eps_c, dv_c, du_c) = (
        col("epsilon")?,
        col("mean_delta_valuation")?,
        col("mean_delta_utility")?,
    );
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(err)?;
        let num = |c: usize| rec[c].parse::<f64>().map_err(err);
        rows.push((num(eps_c)?, num(dv_c)?, num(du_c)?));
    }
    let signs = rows.iter().all(|&(_, dv, du)| dv > 0.0 && du < 0.0);
    let monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    let summary: Vec<String> = rows
        .iter()
        .map(|(e, dv, du)| format!("{e}:{dv:+.2e}/{du:+.2e}"))
        .collect();
    ensure(
        rows.len() == 7 && signs && monotone && secs <= SYNTH_BUDGET_SECS,
        format!("eps:dV/dU {} ({secs:.1}s)", summary.join(" ")),
    )
}

fn criterion_7() -> Outcome {
    let source = RandomInstances::default();
    let mut worst = f64::NEG_INFINITY;
    let mut passed = true;
    for eps in [0.01, 0.05] {
        let noise = NoiseModel::uniform_box(eps).map_err(err)?;
        let r = check_approx_dsic(
            &source,
            &noise,
            &PaymentRule::AffineMaximizer,
            &Solver::Exact,
            20,
            200,
            &settings(100, SEED + 7, APPROX_TOL),
        )
        .map_err(err)?;
        worst = worst.max(r.max_violation);
        passed &= r.passed;
    }
    ensure(passed, format!("max (mean gain - bound) {worst:.2e}"))
}

fn criterion_8() -> Outcome {
    let source = RandomInstances::default();
    let mut worst = f64::NEG_INFINITY;
    let mut passed = true;
    for eps in [0.01, 0.05] {
        let noise = NoiseModel::uniform_box(eps).map_err(err)?;
        let r = check_noise_asw(
            &source,
            &noise,
            &Solver::Exact,
            50,
            false,
            &settings(100, SEED + 8, NOISE_TOL),
        )
        .map_err(err)?;
        worst = worst.max(r.max_violation);
        passed &= r.passed;
    }
    ensure(passed, format!("max (shortfall - budget) {worst:.2e}"))
}

fn criterion_9() -> Outcome {
    let sampler = CycleSampler::default();
    let instances = (0..20)
        .map(|t| sampler.sample(&mut trial_rng(SEED + 9, t)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let grid = instances[0].grid.len();
    let s = settings(instances.len(), SEED + 9, CYCLE_TOL);
    let exact = check_cycle_monotonicity(&instances, &Solver::Exact, 5, 2000, &s).map_err(err)?;
    let set = random_candidates(sampler.k, 8, &mut trial_rng(SEED + 9, u64::MAX));
    let control = check_cycle_monotonicity(&instances, &Solver::ArgminRestricted(set), 5, 2000, &s)
        .map_err(err)?;
    ensure(
        grid == 64 && exact.passed && !control.passed,
        format!(
            "{grid}-point grids, most negative cycle {:.2e}, argmin control {:.2e}",
            -exact.max_violation, -control.max_violation
        ),
    )
}

fn criterion_10() -> Outcome {
    let r: CheckReport = check_payment_path(
        &PathSampler::default(),
        &[4, 8, 16, 32],
        PATH_BOUND,
        &settings(20, SEED + 10, 0.0),
    )
    .map_err(err)?;
    let gaps = r.worst_instance.get("gaps").cloned().unwrap_or_default();
    ensure(
        r.passed,
        format!(
            "worst margin {:.2e}, worst pair gaps {gaps}",
            r.max_violation
        ),
    )
}

fn criterion_11() -> Outcome {
    let mut dir: Vec<PathBuf> = std::fs::read_dir(fixtures().join("sweeps"))
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    dir.sort();
    let mut misses = Vec::new();
    for path in &dir {
        let cfg: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).map_err(err)?).map_err(err)?;
        let group = cfg["sweep"]["group"].as_u64().unwrap_or(0).to_string();
        let (code, stdout) = run_bin(&["sweep", "--config", path.to_str().ok_or("path")?])?;
        if code != 0 {
            return Err(format!("{} exited with {code}", path.display()));
        }
        let mut reader = csv::Reader::from_reader(stdout.as_slice());
        let rows: Vec<csv::StringRecord> =
            reader.records().collect::<Result<_, _>>().map_err(err)?;
        for parameter in ["alpha", "beta"] {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| &r[0] == parameter && r[2] == group)
                .map(|r| Ok((r[1].parse::<f64>()?, r[5].parse::<f64>()?)))
                .collect::<Result<_, std::num::ParseFloatError>>()
                .map_err(err)?;
            let best = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let truthful = points.iter().find(|p| p.0 == 1.0).map(|p| p.1);
            if points.len() != 6
                || truthful.is_none_or(|u| u < best - SWEEP_TIE_TOL * (1.0 + best.abs()))
            {
                misses.push(format!(
                    "{}:{parameter}",
                    path.file_name().unwrap().to_string_lossy()
                ));
            }
        }
    }
    ensure(
        dir.len() == 5 && misses.is_empty(),
        format!(
            "{} fixtures, truthful point outside argmax in {misses:?}",
            dir.len()
        ),
    )
}

fn criterion_12() -> Outcome {
    let source = RandomInstances::default();
    let (mut tested, mut mismatches) = (0usize, 0usize);
    for t in 0..100 {
        let inst = source.sample(&mut trial_rng(SEED + 12, t));
        let (cfg, groups) = (&inst.cfg, &inst.groups);
        let base = solve_exact(cfg, groups).map_err(err)?.policy;
        for i in 0..groups.len() {
            let tv = t_function(cfg, groups, i).map_err(err)?;
            let v0 = valuation(&base, &groups[i].rm).map_err(err)?;
            for (x, &tx) in tv.iter().enumerate() {
                if tx.abs() < T_THRESHOLD {
                    continue;
                }
                let Some(rm) = t_deviation(cfg, groups, i, x, T_DELTA).map_err(err)? else {
                    continue;
                };
                let mut profile = groups.clone();
                profile[i] = GroupType::new(rm, groups[i].w);
                let moved = solve_exact(cfg, &profile).map_err(err)?.policy;
                let dv = valuation(&moved, &groups[i].rm).map_err(err)? - v0;
                tested += 1;
                if dv <= 0.0 {
                    mismatches += 1;
                }
            }
        }
    }
    ensure(
        tested > 0 && mismatches == 0,
        format!("{tested} deviations tested, {mismatches} mismatches"),
    )
}

fn criterion_13() -> Outcome {
    let example = fixtures().join("examples/single_group_kl.json");
    let sweep = fixtures().join("sweeps/game2_w453.json");
    let (example, sweep) = (
        example.to_str().ok_or("path")?,
        sweep.to_str().ok_or("path")?,
    );
    let commands: Vec<Vec<&str>> = vec![
        vec!["solve", "--config", example],
        vec!["sweep", "--config", sweep],
        vec!["synth", "--trials", "500", "--seed", "9"],
        vec!["verify", "--suite", "dsic", "--trials", "50", "--seed", "9"],
        vec!["verify", "--suite", "cycle", "--trials", "4", "--seed", "9"],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        let mut outputs = Vec::new();
        for workers in ["1", "8", "8"] {
            let mut full = args.clone();
            full.extend(["--workers", workers]);
            outputs.push(run_bin(&full)?);
        }
        if outputs.iter().any(|o| o != &outputs[0]) || outputs[0].1.is_empty() {
            differing.push(format!("{} {}", args[0], args.get(2).unwrap_or(&"")));
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} commands x (1, 8, 8 workers), differing: {differing:?}",
            commands.len()
        ),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 13] = [
        ("1 solver-oracle equivalence", criterion_1),
        ("2 kkt residual", criterion_2),
        ("3 dsic", criterion_3),
        ("4 ir and non-negative payments", criterion_4),
        ("5 uniform-report neutrality", criterion_5),
        ("6 synthetic misreport signs", criterion_6),
        ("7 approximate dsic under noise", criterion_7),
        ("8 welfare loss under noise", criterion_8),
        ("9 cycle monotonicity", criterion_9),
        ("10 payment path anti-symmetry", criterion_10),
        ("11 sweep argmax at truthful point", criterion_11),
        ("12 t-function sign prediction", criterion_12),
        ("13 determinism across workers", criterion_13),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.split(' ').next() == Some(f.as_str()))
        {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
