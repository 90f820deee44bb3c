//! Multilevel Monte Carlo over particle systems.
//!
//! Level `l ≥ 1` contributes the correction `φ^l − φ̃^{l−1}`, where `φ^l` is a
//! particle average on grid `l` and `φ̃^{l−1}` the average of a coarse path on
//! grid `l − 1` driven by the same noise. Level 0 contributes `φ^0`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::brownian::sample_lattice;
use crate::error::{config_err, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grid::LevelHierarchy;
use crate::math;
use crate::rng::{derive_seed, domain};
use crate::schemes::{antithetic_pair_on, PathSimulator};
use crate::stats::{CompensatedSum, Welford};

/// Scalar payoff of the terminal value.
#[derive(Clone)]
pub struct Payoff {
    id: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Payoff").field(&self.id).finish()
    }
}

impl Payoff {
    pub fn new(id: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            id: id.into(),
            f: Arc::new(f),
        }
    }

    /// `P(x) = x`.
    pub fn identity() -> Self {
        Self::new("identity", |x| x)
    }

    /// `P(x) = x²`.
    pub fn square() -> Self {
        Self::new("square", |x| x * x)
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "identity" => Ok(Self::identity()),
            "square" => Ok(Self::square()),
            other => Err(config_err(format!("unknown payoff `{other}`"))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn mean_over(&self, xs: &[f64]) -> f64 {
        let mut s = CompensatedSum::default();
        for &x in xs {
            s.add(self.eval(x));
        }
        s.value() / xs.len() as f64
    }
}

/// How the fine and coarse legs of a correction are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// Fine path, its half-step-swapped twin, and a coarse path; the fine leg averages the first two.
    #[default]
    Antithetic,
    /// One fine and one coarse path with the same stepper.
    Standard,
}

impl FromStr for Coupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "antithetic" => Ok(Coupling::Antithetic),
            "standard" => Ok(Coupling::Standard),
            other => Err(config_err(format!("unknown coupling `{other}`"))),
        }
    }
}

impl Coupling {
    pub fn id(self) -> &'static str {
        match self {
            Coupling::Antithetic => "antithetic",
            Coupling::Standard => "standard",
        }
    }
}

/// Sample-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocation {
    /// `K_l = ceil(c ε⁻¹ 2^{−3l/2})` with `c` fitted to the pilot variances.
    PaperRule,
    /// `K_l = ceil(λ √(V_l / C_l))`.
    #[default]
    GilesOptimal,
}

impl FromStr for Allocation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-rule" => Ok(Allocation::PaperRule),
            "giles-optimal" => Ok(Allocation::GilesOptimal),
            other => Err(config_err(format!("unknown allocation `{other}`"))),
        }
    }
}

impl Allocation {
    pub fn id(self) -> &'static str {
        match self {
            Allocation::PaperRule => "paper-rule",
            Allocation::GilesOptimal => "giles-optimal",
        }
    }
}

/// One realization of a level's estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionSample {
    /// `φ^l`: antithetic average, or the plain fine average.
    pub fine: f64,
    /// `φ̃^{l−1}`; zero on level 0.
    pub coarse: f64,
    /// Average of `P(Y^f)` alone.
    pub fine_only: f64,
    /// Particle-step updates spent.
    pub work: u64,
}

impl CorrectionSample {
    pub fn correction(&self) -> f64 {
        self.fine - self.coarse
    }
}

/// Draws correction samples; must be a pure function of `(level, seed)`.
pub trait CorrectionSampler: Sync {
    fn sample(&self, level: usize, seed: u64) -> Result<CorrectionSample>;
    /// Work of one sample at `level`.
    fn cost(&self, level: usize) -> u64;
}

/// Correction samples from fresh particle systems.
#[derive(Debug, Clone)]
pub struct ParticleSampler {
    pub sim: PathSimulator,
    pub hierarchy: LevelHierarchy,
    pub n_particles: usize,
    pub coupling: Coupling,
    pub payoff: Payoff,
}

impl CorrectionSampler for ParticleSampler {
    fn sample(&self, level: usize, seed: u64) -> Result<CorrectionSample> {
        let exec = Sequential;
        let n = self.n_particles;
        let p = &self.payoff;
        let fine_grid = self.hierarchy.grid(level);
        let lattice = sample_lattice(seed, n, &fine_grid)?;
        if level == 0 {
            let areas = self.sim.areas(&exec, &lattice)?;
            let ens = self.sim.run(&exec, &lattice, &areas, &fine_grid)?;
            let m = p.mean_over(ens.terminal());
            return Ok(CorrectionSample {
                fine: m,
                coarse: 0.0,
                fine_only: m,
                work: ens.kernel_calls(),
            });
        }
        match self.coupling {
            Coupling::Antithetic => {
                let pair = antithetic_pair_on(&self.sim, &self.hierarchy, &lattice, level)?;
                let mut s = CompensatedSum::default();
                for (f, a) in pair.fine.terminal().iter().zip(pair.antithetic.terminal()) {
                    s.add(0.5 * (p.eval(*f) + p.eval(*a)));
                }
                Ok(CorrectionSample {
                    fine: s.value() / n as f64,
                    coarse: p.mean_over(pair.coarse.terminal()),
                    fine_only: p.mean_over(pair.fine.terminal()),
                    work: pair.work(),
                })
            }
            Coupling::Standard => {
                let coarse_grid = self.hierarchy.grid(level - 1);
                let areas = self.sim.areas(&exec, &lattice)?;
                let fine = self.sim.run(&exec, &lattice, &areas, &fine_grid)?;
                let coarse = self.sim.run(&exec, &lattice, &areas, &coarse_grid)?;
                let m = p.mean_over(fine.terminal());
                Ok(CorrectionSample {
                    fine: m,
                    coarse: p.mean_over(coarse.terminal()),
                    fine_only: m,
                    work: fine.kernel_calls() + coarse.kernel_calls(),
                })
            }
        }
    }

    fn cost(&self, level: usize) -> u64 {
        let n = self.n_particles as u64;
        let m = |l: usize| self.hierarchy.steps(l) as u64;
        match (level, self.coupling) {
            (0, _) => n * m(0),
            (l, Coupling::Antithetic) => n * (2 * m(l) + m(l - 1)),
            (l, Coupling::Standard) => n * (m(l) + m(l - 1)),
        }
    }
}

/// Running statistics of one level.
#[derive(Debug, Clone, Default)]
pub struct LevelAccumulator {
    correction: Welford,
    correction_sum: CompensatedSum,
    fine: Welford,
    coarse: Welford,
    fine_only: Welford,
    work: u64,
}

impl LevelAccumulator {
    pub fn push(&mut self, s: &CorrectionSample) {
        self.correction.push(s.correction());
        self.correction_sum.add(s.correction());
        self.fine.push(s.fine);
        self.coarse.push(s.coarse);
        self.fine_only.push(s.fine_only);
        self.work += s.work;
    }

    pub fn count(&self) -> u64 {
        self.correction.count()
    }

    pub fn stats(&self, level: usize, cost: u64) -> LevelStats {
        let k = self.count();
        LevelStats {
            level,
            samples: k,
            mean: if k == 0 { 0.0 } else { self.correction_sum.value() / k as f64 },
            variance: self.correction.variance(),
            cost,
            work: self.work,
            fine_mean: self.fine.mean(),
            fine_variance: self.fine.variance(),
            coarse_mean: self.coarse.mean(),
            coarse_variance: self.coarse.variance(),
            fine_only_mean: self.fine_only.mean(),
            fine_only_variance: self.fine_only.variance(),
        }
    }
}

/// Summary of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    /// `K_l`.
    pub samples: u64,
    /// Mean of `φ^l − φ̃^{l−1}` (compensated sum).
    pub mean: f64,
    /// Unbiased variance of the correction.
    pub variance: f64,
    /// Work per sample.
    pub cost: u64,
    /// Instrumented work over all samples.
    pub work: u64,
    pub fine_mean: f64,
    pub fine_variance: f64,
    pub coarse_mean: f64,
    pub coarse_variance: f64,
    pub fine_only_mean: f64,
    pub fine_only_variance: f64,
}

impl LevelStats {
    pub fn std_err(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            math::sqrt(self.variance / self.samples as f64)
        }
    }
}

/// Seed of sample `k` on `level`.
pub fn sample_seed(master: u64, level: usize, k: u64) -> u64 {
    derive_seed(master, &[level as u64, k])
}

/// Adds samples `from..to` of `level` to `acc`, evaluated through `exec` and reduced in index order.
pub fn extend_level<S: CorrectionSampler + ?Sized, E: Executor>(
    sampler: &S,
    exec: &E,
    acc: &mut LevelAccumulator,
    level: usize,
    from: u64,
    to: u64,
    seed_of: impl Fn(u64) -> u64 + Sync + Send,
) -> Result<()> {
    if to <= from {
        return Ok(());
    }
    let samples = exec.map((to - from) as usize, |q| sampler.sample(level, seed_of(from + q as u64)));
    for s in samples {
        acc.push(&s?);
    }
    Ok(())
}

/// Mean and variance of `k` fresh correction samples at `level`.
pub fn estimate_level_stats<S: CorrectionSampler + ?Sized, E: Executor>(
    sampler: &S,
    exec: &E,
    level: usize,
    k: u64,
    master: u64,
) -> Result<LevelStats> {
    if k < 2 {
        return Err(config_err("at least two samples are needed for a variance estimate"));
    }
    let mut acc = LevelAccumulator::default();
    extend_level(sampler, exec, &mut acc, level, 0, k, |q| sample_seed(master, level, q))?;
    Ok(acc.stats(level, sampler.cost(level)))
}

/// `ceil` that ignores round-off just above an integer.
fn ceil_tol(x: f64) -> u64 {
    let r = math::round(x);
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(1.0) as u64
    } else {
        math::ceil(x).max(1.0) as u64
    }
}

/// Real-valued paper-rule sample sizes `c ε⁻¹ 2^{−3l/2}` with `c = (2/ε) Σ V_l 2^{3l/2}`.
pub fn paper_rule_sizes(levels: &[usize], variances: &[f64], epsilon: f64) -> Vec<f64> {
    let c: f64 = (2.0 / epsilon)
        * levels
            .iter()
            .zip(variances)
            .map(|(&l, &v)| v * math::exp2(1.5 * l as f64))
            .sum::<f64>();
    levels.iter().map(|&l| c / epsilon * math::exp2(-1.5 * l as f64)).collect()
}

/// Sample sizes per level so that the estimator variance `Σ V_l/K_l ≤ ε²/2`.
pub fn allocate_samples(stats: &[LevelStats], epsilon: f64, rule: Allocation) -> Result<Vec<u64>> {
    if stats.is_empty() {
        return Err(config_err("no level statistics to allocate from"));
    }
    if !(epsilon > 0.0) {
        return Err(config_err("epsilon must be positive"));
    }
    if stats.iter().all(|s| s.variance == 0.0) {
        return Ok(alloc::vec![1; stats.len()]);
    }
    Ok(match rule {
        Allocation::GilesOptimal => {
            let lambda: f64 = (2.0 / (epsilon * epsilon))
                * stats.iter().map(|s| math::sqrt(s.variance * s.cost as f64)).sum::<f64>();
            stats
                .iter()
                .map(|s| ceil_tol(lambda * math::sqrt(s.variance / s.cost as f64)))
                .collect()
        }
        Allocation::PaperRule => {
            let levels: Vec<usize> = stats.iter().map(|s| s.level).collect();
            let vars: Vec<f64> = stats.iter().map(|s| s.variance).collect();
            paper_rule_sizes(&levels, &vars, epsilon).into_iter().map(ceil_tol).collect()
        }
    })
}

/// Controls of [`run_mlmc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig {
    pub epsilon: f64,
    pub min_level: usize,
    pub max_level: usize,
    pub pilot_samples: u64,
    pub allocation: Allocation,
    pub master_seed: u64,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            min_level: 2,
            max_level: 8,
            pilot_samples: 20,
            allocation: Allocation::GilesOptimal,
            master_seed: 0,
        }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(config_err("epsilon must be positive"));
        }
        if self.min_level > self.max_level {
            return Err(config_err("min_level exceeds max_level"));
        }
        if self.pilot_samples < 2 {
            return Err(config_err("pilot_samples must be at least 2"));
        }
        Ok(())
    }
}

/// Result of [`run_mlmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcResult {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    /// `Σ_l K_l · cost_l`.
    pub total_work: u64,
    /// `|mean correction|` at the finest level.
    pub bias_proxy: f64,
    /// `Σ_l V_l / K_l`.
    pub estimator_variance: f64,
    pub epsilon: f64,
    /// True if the bias test passed before `max_level` was exhausted.
    pub converged: bool,
}

/// Adaptive MLMC: pilot levels `0..=min_level`, allocate, top up, and add a
/// level while the finest mean correction exceeds `ε/√2`.
pub fn run_mlmc<S: CorrectionSampler + ?Sized, E: Executor>(
    cfg: &MlmcConfig,
    sampler: &S,
    exec: &E,
) -> Result<MlmcResult> {
    cfg.validate()?;
    let master = cfg.master_seed;
    let mut accs: Vec<LevelAccumulator> = Vec::new();
    let pilot = |accs: &mut Vec<LevelAccumulator>, l: usize| -> Result<()> {
        let mut acc = LevelAccumulator::default();
        extend_level(sampler, exec, &mut acc, l, 0, cfg.pilot_samples, |k| sample_seed(master, l, k))?;
        accs.push(acc);
        Ok(())
    };
    for l in 0..=cfg.min_level {
        pilot(&mut accs, l)?;
    }
    let bias_limit = cfg.epsilon / math::sqrt(2.0);
    let mut converged;
    loop {
        for _ in 0..8 {
            let stats: Vec<LevelStats> =
                accs.iter().enumerate().map(|(l, a)| a.stats(l, sampler.cost(l))).collect();
            let target = allocate_samples(&stats, cfg.epsilon, cfg.allocation)?;
            let mut grew = false;
            for (l, acc) in accs.iter_mut().enumerate() {
                let have = acc.count();
                if target[l] > have {
                    extend_level(sampler, exec, acc, l, have, target[l], |k| sample_seed(master, l, k))?;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        let finest = accs.len() - 1;
        let bias = accs[finest].stats(finest, 0).mean.abs();
        converged = bias <= bias_limit;
        if converged || finest >= cfg.max_level {
            break;
        }
        pilot(&mut accs, finest + 1)?;
    }
    let levels: Vec<LevelStats> =
        accs.iter().enumerate().map(|(l, a)| a.stats(l, sampler.cost(l))).collect();
    let mut est = CompensatedSum::default();
    let mut var = 0.0;
    for s in &levels {
        est.add(s.mean);
        var += s.variance / s.samples as f64;
    }
    let last = levels.last().expect("at least one level");
    Ok(MlmcResult {
        estimate: est.value(),
        total_work: levels.iter().map(|s| s.work).sum(),
        bias_proxy: last.mean.abs(),
        estimator_variance: var,
        epsilon: cfg.epsilon,
        converged,
        levels,
    })
}

/// Plain multilevel estimate with prescribed sample counts per level `0..K.len()`.
pub fn run_fixed<S: CorrectionSampler + ?Sized, E: Executor>(
    sampler: &S,
    exec: &E,
    samples: &[u64],
    master: u64,
) -> Result<MlmcResult> {
    let mut levels = Vec::with_capacity(samples.len());
    for (l, &k) in samples.iter().enumerate() {
        let mut acc = LevelAccumulator::default();
        extend_level(sampler, exec, &mut acc, l, 0, k, |q| sample_seed(master, l, q))?;
        levels.push(acc.stats(l, sampler.cost(l)));
    }
    let mut est = CompensatedSum::default();
    let mut var = 0.0;
    for s in &levels {
        est.add(s.mean);
        if s.samples > 0 {
            var += s.variance / s.samples as f64;
        }
    }
    Ok(MlmcResult {
        estimate: est.value(),
        total_work: levels.iter().map(|s| s.work).sum(),
        bias_proxy: levels.last().map_or(0.0, |s| s.mean.abs()),
        estimator_variance: var,
        epsilon: f64::NAN,
        converged: true,
        levels,
    })
}

/// Comparison of the level-`(l−1)` fine estimator with the coarse leg of level `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopingReport {
    pub level: usize,
    pub samples: u64,
    /// `E[φ^{l−1}]` from standalone level-`(l−1)` systems.
    pub standalone_mean: f64,
    pub standalone_se: f64,
    /// `E[φ̃^{l−1}]` from the coarse legs of level-`l` corrections.
    pub coarse_leg_mean: f64,
    pub coarse_leg_se: f64,
    pub difference: f64,
    pub combined_se: f64,
    /// `E[φ^l]` (antithetic average) and `E[P(Y^f)]` on independent seeds.
    pub fine_leg_mean: f64,
    pub fine_leg_se: f64,
    pub fine_only_mean: f64,
    pub fine_only_se: f64,
}

/// Estimates both sides of the telescoping identity on independent seeds.
pub fn telescoping_check<S: CorrectionSampler + ?Sized, E: Executor>(
    sampler: &S,
    exec: &E,
    level: usize,
    k: u64,
    master: u64,
) -> Result<TelescopingReport> {
    if level == 0 {
        return Err(config_err("telescoping check needs level >= 1"));
    }
    if k < 2 {
        return Err(config_err("at least two samples are needed"));
    }
    let seeds = |part: u64| move |q: u64| derive_seed(master, &[domain::TELESCOPE, part, q]);
    let mut standalone = LevelAccumulator::default();
    extend_level(sampler, exec, &mut standalone, level - 1, 0, k, seeds(0))?;
    let mut legs = LevelAccumulator::default();
    extend_level(sampler, exec, &mut legs, level, 0, k, seeds(1))?;
    let mut fine_only = LevelAccumulator::default();
    extend_level(sampler, exec, &mut fine_only, level, 0, k, seeds(2))?;
    let a = standalone.stats(level - 1, 0);
    let b = legs.stats(level, 0);
    let c = fine_only.stats(level, 0);
    let kf = k as f64;
    let se = |v: f64| math::sqrt(v / kf);
    let standalone_se = se(a.fine_variance);
    let coarse_leg_se = se(b.coarse_variance);
    Ok(TelescopingReport {
        level,
        samples: k,
        standalone_mean: a.fine_mean,
        standalone_se,
        coarse_leg_mean: b.coarse_mean,
        coarse_leg_se,
        difference: a.fine_mean - b.coarse_mean,
        combined_se: math::sqrt(standalone_se * standalone_se + coarse_leg_se * coarse_leg_se),
        fine_leg_mean: b.fine_mean,
        fine_leg_se: se(b.fine_variance),
        fine_only_mean: c.fine_only_mean,
        fine_only_se: se(c.fine_only_variance),
    })
}
