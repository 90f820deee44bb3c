//! JSON experiment configuration.
//!
//! A file has five optional sections, `model`, `grid`, `stepper`, `mlmc` and
//! `experiment`; every key has a default. [`Config::resolve`] fills in the
//! defaults that depend on the subcommand and validates everything before any
//! sampling starts. The resolved form is what gets written next to the
//! outputs, and feeding it back in reproduces them.

use std::str::FromStr;
use std::sync::Arc;

use mkvmlmc_core::grid::{DelaySpec, LevelHierarchy};
use mkvmlmc_core::mlmc::{Allocation, Coupling, MlmcConfig, ParticleSampler, Payoff};
use mkvmlmc_core::model::{BuiltinModel, FixtureParams, ModelHandle, Taming};
use mkvmlmc_core::particles::{InitialSegment, PiecewiseLinear};
use mkvmlmc_core::schemes::{PathSimulator, Scheme, Truncation};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// Experiment selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    StrongConvergence,
    VarianceDecay,
    MeanDecay,
    Complexity,
    LevyValidate,
    Moments,
    Mlmc,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Simulate,
        Experiment::StrongConvergence,
        Experiment::VarianceDecay,
        Experiment::MeanDecay,
        Experiment::Complexity,
        Experiment::LevyValidate,
        Experiment::Moments,
        Experiment::Mlmc,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::StrongConvergence => "strong-convergence",
            Experiment::VarianceDecay => "variance-decay",
            Experiment::MeanDecay => "mean-decay",
            Experiment::Complexity => "complexity",
            Experiment::LevyValidate => "levy-validate",
            Experiment::Moments => "moments",
            Experiment::Mlmc => "mlmc",
        }
    }

    /// Experiments built on the antithetic estimator.
    pub fn is_multilevel(self) -> bool {
        matches!(
            self,
            Experiment::VarianceDecay | Experiment::MeanDecay | Experiment::Complexity | Experiment::Mlmc
        )
    }
}

impl FromStr for Experiment {
    type Err = AppError;
    fn from_str(s: &str) -> Result<Self, AppError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| AppError::invalid(format!("unknown experiment `{s}`")))
    }
}

/// Initial segment on `[-τ, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    Zero,
    Constant { value: f64 },
    /// `ξ(θ) = intercept + slope·θ`.
    Linear { intercept: f64, slope: f64 },
    /// Linear interpolation through `(times[q], values[q])`.
    Samples { times: Vec<f64>, values: Vec<f64> },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Built-in model id; defaults to `example1`, or `antithetic-example1` for multilevel experiments.
    pub id: Option<String>,
    /// Number of equally spaced delay offsets `0, −τ/(k−1), …, −τ`.
    pub k: usize,
    /// Explicit offsets, overriding `k`.
    pub offsets: Option<Vec<f64>>,
    pub drift_constant: f64,
    pub drift_linear: f64,
    pub sigma: Option<f64>,
    pub initial: InitialConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            id: None,
            k: 2,
            offsets: None,
            drift_constant: 0.0,
            drift_linear: 0.0,
            sigma: None,
            initial: InitialConfig::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub tau: f64,
    pub horizon: f64,
    /// Steps on `[0, T]` at level 0; level `l` has `base_steps · 2^l`.
    pub base_steps: usize,
    pub min_level: usize,
    pub max_level: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            tau: 0.125,
            horizon: 1.0,
            base_steps: 8,
            min_level: 2,
            max_level: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperSection {
    /// `euler`, `milstein`, `zero-levy-milstein` or `antithetic-coarse`.
    pub scheme: Option<String>,
    /// `none`, `scheme1` or `scheme2`; defaults to `scheme1`.
    pub taming: Option<String>,
    /// `sqrt-steps`, `inverse-sqrt-mesh` or `fixed` (with `r`).
    pub truncation: String,
    pub r: Option<usize>,
    pub max_pairs: usize,
}

impl Default for StepperSection {
    fn default() -> Self {
        Self {
            scheme: None,
            taming: None,
            truncation: "sqrt-steps".into(),
            r: None,
            max_pairs: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmcSection {
    pub particles: usize,
    pub coupling: String,
    pub payoff: String,
    pub allocation: String,
    pub epsilon: f64,
    pub epsilons: Vec<f64>,
    pub pilot_samples: u64,
    pub min_level: usize,
    pub max_level: usize,
    /// `K` per level for fixed-sample experiments.
    pub samples_per_level: u64,
    /// Particle counts compared by `variance-decay`.
    pub particle_counts: Vec<usize>,
    /// Stepper of the standard-coupling comparison series.
    pub standard_scheme: Option<String>,
    /// Reserved for a level-dependent particle count; only `false` is supported.
    pub level_dependent_particles: bool,
}

impl Default for MlmcSection {
    fn default() -> Self {
        Self {
            particles: 1000,
            coupling: "antithetic".into(),
            payoff: "identity".into(),
            allocation: "giles-optimal".into(),
            epsilon: 0.02,
            epsilons: vec![0.04, 0.02, 0.01],
            pilot_samples: 20,
            min_level: 2,
            max_level: 8,
            samples_per_level: 200,
            particle_counts: vec![512, 1024, 2048],
            standard_scheme: None,
            level_dependent_particles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub level: usize,
    /// Trajectories written to `simulate.csv`.
    pub dump_particles: usize,
    pub moment_p: f64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            level: 4,
            dump_particles: 10,
            moment_p: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrongOptions {
    /// `consecutive` compares levels `l` and `l − 1`; `finest` compares with `reference_level`.
    pub reference: String,
    /// Reference level for `finest`; defaults to `max_level + 2`.
    pub reference_level: Option<usize>,
    /// Stepper of the `finest` reference path; defaults to `stepper.scheme`.
    pub reference_scheme: Option<String>,
}

impl Default for StrongOptions {
    fn default() -> Self {
        Self {
            reference: "consecutive".into(),
            reference_level: None,
            reference_scheme: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentOptions {
    pub p: f64,
    /// Step counts on `[0, T]` for the tamed runs.
    pub steps: Vec<usize>,
    /// Step count of the untamed Euler comparison run; `0` disables it.
    pub untamed_steps: usize,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            steps: vec![256, 512, 1024],
            untamed_steps: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevyOptions {
    pub delta: f64,
    pub r_values: Vec<usize>,
    pub substeps: usize,
    pub samples: usize,
}

impl Default for LevyOptions {
    fn default() -> Self {
        Self {
            delta: 0.0625,
            r_values: vec![8, 16, 32, 64],
            substeps: 4096,
            samples: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelescopingOptions {
    pub level: usize,
    pub samples: u64,
}

impl Default for TelescopingOptions {
    fn default() -> Self {
        Self { level: 3, samples: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<Experiment>,
    pub seed: u64,
    pub replications: usize,
    /// Worker threads; all cores when absent. Results do not depend on it.
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
    pub simulate: SimulateOptions,
    pub strong: StrongOptions,
    pub moments: MomentOptions,
    pub levy: LevyOptions,
    pub telescoping: TelescopingOptions,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: None,
            seed: 0,
            replications: 20,
            threads: None,
            out_dir: None,
            simulate: SimulateOptions::default(),
            strong: StrongOptions::default(),
            moments: MomentOptions::default(),
            levy: LevyOptions::default(),
            telescoping: TelescopingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub grid: GridSection,
    pub stepper: StepperSection,
    pub mlmc: MlmcSection,
    pub experiment: ExperimentSection,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| AppError::invalid(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Fills subcommand-dependent defaults and validates. `seed` overrides the file's seed.
    pub fn resolve(mut self, experiment: Experiment, seed: Option<u64>) -> Result<Resolved, AppError> {
        if let Some(kind) = self.experiment.kind {
            if kind != experiment {
                return Err(AppError::invalid(format!(
                    "config is for `{}` but `{}` was requested",
                    kind.id(),
                    experiment.id()
                )));
            }
        }
        self.experiment.kind = Some(experiment);
        if let Some(s) = seed {
            self.experiment.seed = s;
        }
        let multilevel = experiment.is_multilevel();
        let model_id = self
            .model
            .id
            .get_or_insert_with(|| if multilevel { "antithetic-example1" } else { "example1" }.into())
            .clone();
        let scheme_id = self
            .stepper
            .scheme
            .get_or_insert_with(|| if multilevel { "antithetic-coarse" } else { "milstein" }.into())
            .clone();
        let scheme: Scheme = scheme_id.parse()?;
        let taming_id = self
            .stepper
            .taming
            .get_or_insert_with(|| Taming::Scheme1.id().to_string())
            .clone();
        let taming: Taming = taming_id.parse()?;
        let standard_id = self
            .mlmc
            .standard_scheme
            .get_or_insert_with(|| scheme_id.clone())
            .clone();
        let standard_scheme: Scheme = standard_id.parse()?;

        let g = &self.grid;
        if g.min_level > g.max_level {
            return Err(AppError::invalid("grid.min_level exceeds grid.max_level"));
        }
        let hierarchy = LevelHierarchy::new(g.horizon, g.tau, g.base_steps)?;
        let delay = match &self.model.offsets {
            Some(o) => DelaySpec::new(g.tau, g.horizon, o.clone())?,
            None => DelaySpec::uniform(g.tau, g.horizon, self.model.k)?,
        };
        for l in 0..=g.max_level.max(self.mlmc.max_level) {
            delay.validate_against(&hierarchy.grid(l))?;
        }
        let builtin: BuiltinModel = model_id.parse()?;
        let params = FixtureParams {
            drift_constant: self.model.drift_constant,
            drift_linear: self.model.drift_linear,
            sigma: self.model.sigma,
        };
        let model = builtin.build_with(delay.k(), &params)?;
        let truncation = match (self.stepper.truncation.as_str(), self.stepper.r) {
            ("sqrt-steps", None) => Truncation::SqrtSteps,
            ("inverse-sqrt-mesh", None) => Truncation::InverseSqrtMesh,
            ("fixed", Some(r)) if r > 0 => Truncation::Fixed(r),
            ("fixed", _) => return Err(AppError::invalid("stepper.truncation `fixed` needs a positive stepper.r")),
            (t, Some(_)) if t == "sqrt-steps" || t == "inverse-sqrt-mesh" => {
                return Err(AppError::invalid("stepper.r is only used with truncation `fixed`"))
            }
            (other, _) => return Err(AppError::invalid(format!("unknown truncation rule `{other}`"))),
        };
        let initial = initial_segment(&self.model.initial)?;

        let m = &self.mlmc;
        if m.level_dependent_particles {
            return Err(AppError::invalid("mlmc.level_dependent_particles is reserved and must be false"));
        }
        if m.particles == 0 || m.particle_counts.contains(&0) {
            return Err(AppError::invalid("particle counts must be positive"));
        }
        let coupling: Coupling = m.coupling.parse()?;
        let payoff = Payoff::from_id(&m.payoff)?;
        let allocation: Allocation = m.allocation.parse()?;
        if m.epsilons.iter().chain([&m.epsilon]).any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(AppError::invalid("epsilon values must be positive"));
        }
        if m.samples_per_level < 2 {
            return Err(AppError::invalid("mlmc.samples_per_level must be at least 2"));
        }
        let mlmc = MlmcConfig {
            epsilon: m.epsilon,
            min_level: m.min_level,
            max_level: m.max_level,
            pilot_samples: m.pilot_samples,
            allocation,
            master_seed: self.experiment.seed,
        };
        mlmc.validate()?;

        let e = &self.experiment;
        if e.replications == 0 {
            return Err(AppError::invalid("experiment.replications must be positive"));
        }
        if e.threads == Some(0) {
            return Err(AppError::invalid("experiment.threads must be positive"));
        }
        if !matches!(e.strong.reference.as_str(), "consecutive" | "finest") {
            return Err(AppError::invalid(format!("unknown strong.reference `{}`", e.strong.reference)));
        }
        let reference_id = self.experiment.strong.reference_scheme.get_or_insert_with(|| scheme_id.clone()).clone();
        let reference_scheme: Scheme = reference_id.parse()?;
        let e = &self.experiment;
        if let Some(r) = e.strong.reference_level {
            if r <= g.max_level {
                return Err(AppError::invalid("strong.reference_level must exceed grid.max_level"));
            }
        }
        if e.moments.steps.is_empty() || !(e.moments.p >= 1.0) {
            return Err(AppError::invalid("moments needs at least one step count and p >= 1"));
        }
        if !(e.levy.delta > 0.0) || e.levy.r_values.is_empty() || e.levy.substeps < 2 || e.levy.samples < 2 {
            return Err(AppError::invalid("levy options need delta > 0, r values, substeps >= 2 and samples >= 2"));
        }
        if e.levy.r_values.iter().any(|&r| r == 0 || 2 * r > e.levy.substeps) {
            return Err(AppError::invalid("each Lévy truncation r must satisfy 1 <= 2r <= substeps"));
        }
        if e.telescoping.level == 0 || e.telescoping.samples < 2 {
            return Err(AppError::invalid("telescoping needs level >= 1 and at least 2 samples"));
        }

        let mut sim = PathSimulator::new(model.clone(), delay.clone(), scheme, taming);
        sim.truncation = truncation;
        sim.initial = initial;
        sim.max_pairs = self.stepper.max_pairs;
        for l in 0..=g.max_level {
            sim.validate(&hierarchy.grid(l))?;
        }
        let mut standard = sim.clone();
        standard.scheme = standard_scheme;
        standard.validate(&hierarchy.grid(0))?;
        let mut reference = sim.clone();
        reference.scheme = reference_scheme;
        reference.validate(&hierarchy.grid(0))?;

        Ok(Resolved {
            experiment,
            config: self,
            model,
            delay,
            hierarchy,
            sim,
            standard,
            reference,
            coupling,
            payoff,
            mlmc,
        })
    }
}

fn initial_segment(c: &InitialConfig) -> Result<InitialSegment, AppError> {
    Ok(match c {
        InitialConfig::Zero => InitialSegment::Zero,
        InitialConfig::Constant { value } => {
            let v = *value;
            InitialSegment::Function(Arc::new(move |_| v))
        }
        InitialConfig::Linear { intercept, slope } => {
            let (a, b) = (*intercept, *slope);
            InitialSegment::Function(Arc::new(move |t| a + b * t))
        }
        InitialConfig::Samples { times, values } => {
            InitialSegment::Samples(PiecewiseLinear::new(times.clone(), values.clone())?)
        }
    })
}

/// A validated configuration with the core objects built from it.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: Experiment,
    /// The configuration with every default made explicit.
    pub config: Config,
    pub model: ModelHandle,
    pub delay: DelaySpec,
    pub hierarchy: LevelHierarchy,
    /// Simulator for the configured stepper.
    pub sim: PathSimulator,
    /// Simulator for the standard-coupling comparison.
    pub standard: PathSimulator,
    /// Simulator for the strong-error reference path.
    pub reference: PathSimulator,
    pub coupling: Coupling,
    pub payoff: Payoff,
    pub mlmc: MlmcConfig,
}

impl Resolved {
    pub fn seed(&self) -> u64 {
        self.config.experiment.seed
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.config.grid.min_level..=self.config.grid.max_level
    }

    /// Sampler for the configured stepper and coupling with `n` particles.
    pub fn sampler(&self, n: usize) -> ParticleSampler {
        ParticleSampler {
            sim: self.sim.clone(),
            hierarchy: self.hierarchy,
            n_particles: n,
            coupling: self.coupling,
            payoff: self.payoff.clone(),
        }
    }

    /// Standard-coupling sampler for comparisons.
    pub fn standard_sampler(&self, n: usize) -> ParticleSampler {
        ParticleSampler {
            sim: self.standard.clone(),
            hierarchy: self.hierarchy,
            n_particles: n,
            coupling: Coupling::Standard,
            payoff: self.payoff.clone(),
        }
    }
}
