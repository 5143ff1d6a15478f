use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rlhf_game::divergence::DivergenceSpec;
use rlhf_game::domain::{GameConfig, GroupType, NormMode};
use rlhf_game::mechanism::{FixedLists, PaymentRule};
use rlhf_game::training::{CandidateSet, Solver};
use rlhf_game::verify::{CycleSampler, EdgeFamily, PathSampler, RandomInstances};
use serde::Deserialize;

use crate::error::CliError;

/// One experiment document. Every section except the one the invoked
/// command needs may be omitted.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub game: Option<GameConfig>,
    /// True types, one per group.
    #[serde(default)]
    pub groups: Vec<GroupType>,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub payment: PaymentChoice,
    /// Candidate policies for the restricted training and payment rules.
    #[serde(default)]
    pub candidates: Option<CandidateSet>,
    /// Per-group without-`i` candidate lists for `restricted_h2`.
    #[serde(default)]
    pub h2_candidates: Option<Vec<CandidateSet>>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn game(&self) -> Result<&GameConfig, CliError> {
        self.game
            .as_ref()
            .ok_or_else(|| CliError::Config("missing \"game\" section".into()))
    }

    fn candidate_set(&self) -> Result<CandidateSet, CliError> {
        self.candidates
            .clone()
            .ok_or_else(|| CliError::Config("restricted rules need a \"candidates\" list".into()))
    }

    pub fn solver(&self) -> Result<Solver, CliError> {
        Ok(match &self.solver {
            SolverChoice::Exact => Solver::Exact,
            SolverChoice::Bisection => Solver::Bisection,
            SolverChoice::Grid { resolution } => Solver::Grid {
                resolution: *resolution,
            },
            SolverChoice::Restricted => Solver::Restricted(self.candidate_set()?),
            SolverChoice::ArgminRestricted => Solver::ArgminRestricted(self.candidate_set()?),
        })
    }

    pub fn payment_rule(&self) -> Result<PaymentRule, CliError> {
        Ok(match &self.payment {
            PaymentChoice::Zero => PaymentRule::Zero,
            PaymentChoice::AffineMaximizer => PaymentRule::AffineMaximizer,
            PaymentChoice::ShiftedAffine { surcharge } => PaymentRule::ShiftedAffine(*surcharge),
            PaymentChoice::RestrictedH1 => PaymentRule::RestrictedH1(self.candidate_set()?),
            PaymentChoice::RestrictedH2 => {
                let lists = self.h2_candidates.clone().ok_or_else(|| {
                    CliError::Config("restricted_h2 needs \"h2_candidates\"".into())
                })?;
                PaymentRule::RestrictedH2(Arc::new(FixedLists(lists)))
            }
        })
    }

    /// Validated true types for the configured game.
    pub fn groups(&self) -> Result<&[GroupType], CliError> {
        let game = self.game()?;
        if self.groups.is_empty() {
            return Err(CliError::Config(
                "\"groups\" must list at least one group".into(),
            ));
        }
        game.validate_reports(&self.groups)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(&self.groups)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverChoice {
    #[default]
    Exact,
    Bisection,
    Grid {
        resolution: f64,
    },
    Restricted,
    ArgminRestricted,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PaymentChoice {
    Zero,
    #[default]
    AffineMaximizer,
    ShiftedAffine {
        surcharge: f64,
    },
    RestrictedH1,
    RestrictedH2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// The misreporting group.
    #[serde(default)]
    pub group: usize,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self, n: usize) -> Result<(), CliError> {
        if self.group >= n {
            return Err(CliError::Config(format!(
                "sweep group {} out of range for {n} groups",
                self.group
            )));
        }
        if self.alphas.is_empty() && self.betas.is_empty() {
            return Err(CliError::Config(
                "sweep needs a non-empty alpha or beta grid".into(),
            ));
        }
        if self
            .alphas
            .iter()
            .chain(&self.betas)
            .any(|v| !v.is_finite())
        {
            return Err(CliError::Config("sweep grids must be finite".into()));
        }
        if self.alphas.iter().any(|&a| a <= 0.0) {
            return Err(CliError::Config("alpha values must be positive".into()));
        }
        if !self.betas.is_empty() && n < 2 {
            return Err(CliError::Config(
                "a beta sweep needs at least two groups".into(),
            ));
        }
        Ok(())
    }
}

/// The synthetic misreporting experiment: random games, one group shifts
/// its report by epsilon.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    pub samples: usize,
    pub epsilons: Vec<f64>,
    pub divergence: DivergenceSpec,
    pub mode: NormMode,
    /// Sizes are drawn uniformly from `1..=w_max`.
    pub w_max: u32,
    /// The deviating group.
    pub group: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 5,
            k: 10,
            samples: 10_000,
            epsilons: vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1],
            divergence: DivergenceSpec::kl(1.0).expect("positive lambda"),
            mode: NormMode::SumToOne,
            w_max: 10,
            group: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub instances: RandomInstances,
    /// Draw IR instances from the rare-outcome family instead.
    pub edge_family: bool,
    pub edge: EdgeFamily,
    /// Random deviations per trial (dsic) or per group (approx-dsic).
    pub deviations: usize,
    pub noise_epsilons: Vec<f64>,
    /// Monte-Carlo draws per expectation in approx-dsic.
    pub samples: usize,
    /// Noise draws per instance in noise-asw.
    pub draws: usize,
    pub adversarial: bool,
    pub cycle: CycleSampler,
    pub max_cycle_len: usize,
    pub sampled_cycles: usize,
    /// Size of the random candidate set used when a restricted rule runs
    /// without explicit candidates.
    pub random_candidates: usize,
    pub path: PathSampler,
    pub path_steps: Vec<usize>,
    pub path_bound: f64,
    pub tolerance: Option<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            instances: RandomInstances::default(),
            edge_family: false,
            edge: EdgeFamily::default(),
            deviations: 20,
            noise_epsilons: vec![0.01, 0.05],
            samples: 200,
            draws: 50,
            adversarial: true,
            cycle: CycleSampler::default(),
            max_cycle_len: 5,
            sampled_cycles: 2000,
            random_candidates: 8,
            path: PathSampler::default(),
            path_steps: vec![4, 8, 16, 32],
            path_bound: 0.02,
            tolerance: None,
        }
    }
}
