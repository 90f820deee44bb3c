//! Time-stepping kernels.
//!
//! * [`step_euler`] / [`step_milstein`]: tamed Euler–Maruyama and tamed
//!   Milstein for general point-delay coefficients.
//! * [`antithetic_operator`] / [`step_antithetic_coarse`]: the coarse operator
//!   `𝒮` for one-point delay models, which replaces delayed iterated integrals
//!   by `½ ΔW_n ΔW_{n−τ}`.
//! * [`run_antithetic_pair`]: fine, antithetic and coarse paths on one lattice.
//!
//! A step is a map over particles followed by finalization of the new node;
//! coefficient callbacks only ever read finalized nodes.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::brownian::{
    antithetic_view, default_truncation, sample_lattice, BrownianLattice, Increments,
    IteratedIntegrals, LevyAreaSource, LevyMode,
};
use crate::error::{config_err, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grid::{DelaySpec, LevelHierarchy, TimeGrid};
use crate::math;
use crate::model::{
    tame_drift, DelayCoefficients, MeasureView, ModelHandle, OnePointDelayModel, Taming,
    MAX_ARITY,
};
use crate::particles::{init_ensemble, EnsembleState, InitialSegment};

/// Number of fine lattice steps per step of `grid`.
fn lattice_ratio<I: Increments + ?Sized>(incs: &I, grid: &TimeGrid) -> Result<usize> {
    let fine = incs.fine_steps();
    if fine % grid.steps() != 0 {
        return Err(config_err(format!(
            "lattice with {fine} steps cannot drive a grid with {} steps",
            grid.steps()
        )));
    }
    let ratio = fine / grid.steps();
    let mesh = incs.fine_mesh() * ratio as f64;
    if (mesh - grid.mesh()).abs() > 1e-12 * grid.mesh() {
        return Err(config_err("lattice mesh and grid mesh disagree"));
    }
    Ok(ratio)
}

/// Fixed inputs of a general-coefficient step.
pub struct DelayStepContext<'a, I: Increments + ?Sized, L = LevyAreaSource<'a, I>> {
    coeffs: &'a dyn DelayCoefficients,
    grid: TimeGrid,
    offsets: Vec<usize>,
    taming: Taming,
    increments: &'a I,
    ratio: usize,
    levy: Option<&'a L>,
}

impl<'a, I: Increments + ?Sized, L: IteratedIntegrals> DelayStepContext<'a, I, L> {
    /// Validates the delay structure against `grid` and the lattice against
    /// the grid. Cross-particle iterated integrals cost `O(N²)` per step; if
    /// the model needs them and `N² > max_pairs` the context is rejected.
    pub fn new(
        coeffs: &'a dyn DelayCoefficients,
        delay: &DelaySpec,
        grid: &TimeGrid,
        taming: Taming,
        increments: &'a I,
        levy: Option<&'a L>,
        max_pairs: usize,
    ) -> Result<Self> {
        if coeffs.arity() != delay.k() {
            return Err(config_err(format!(
                "model expects {} delay offsets but {} were configured",
                coeffs.arity(),
                delay.k()
            )));
        }
        if delay.k() > MAX_ARITY {
            return Err(config_err(format!("at most {MAX_ARITY} delay offsets are supported")));
        }
        let offsets = delay.offset_steps(grid)?;
        let ratio = lattice_ratio(increments, grid)?;
        let n = increments.n_particles();
        if levy.is_some() && coeffs.flags().diffusion_uses_measure_grad {
            let pairs = n.saturating_mul(n);
            if pairs > max_pairs {
                return Err(config_err(format!(
                    "model needs {pairs} cross-particle iterated integrals per step, above max_pairs = {max_pairs}"
                )));
            }
        }
        Ok(Self {
            coeffs,
            grid: *grid,
            offsets,
            taming,
            increments,
            ratio,
            levy,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

/// An ensemble together with `σ` evaluated at every finalized non-negative node.
#[derive(Debug, Clone)]
pub struct PathState {
    pub ensemble: EnsembleState,
    /// Node-major `σ(Π(Y_q), Π(μ_q))` for `q = 0..`.
    sigma: Vec<f64>,
}

impl PathState {
    pub fn new(ensemble: EnsembleState) -> Self {
        Self {
            ensemble,
            sigma: Vec::new(),
        }
    }

    /// `σ̃` at node `q` for particle `i`: zero before time 0.
    #[inline]
    fn sigma_tilde(&self, q: isize, i: usize) -> f64 {
        if q < 0 {
            0.0
        } else {
            self.sigma[q as usize * self.ensemble.n_particles() + i]
        }
    }
}

fn gather(ens: &EnsembleState, offsets: &[usize], n: isize, i: usize, buf: &mut [f64; MAX_ARITY]) {
    for (l, &d) in offsets.iter().enumerate() {
        buf[l] = ens.at(n - d as isize, i);
    }
}

fn views<'e>(ens: &'e EnsembleState, offsets: &[usize], n: isize) -> Result<Vec<MeasureView<'e>>> {
    offsets.iter().map(|&d| ens.measure_view(n - d as isize)).collect()
}

fn ensure_sigma<E, I, L>(exec: &E, ctx: &DelayStepContext<'_, I, L>, st: &mut PathState, n: usize) -> Result<()>
where
    E: Executor,
    I: Increments + ?Sized,
    L: IteratedIntegrals,
{
    let np = st.ensemble.n_particles();
    if st.sigma.len() >= (n + 1) * np {
        return Ok(());
    }
    let ens = &st.ensemble;
    let mus = views(ens, &ctx.offsets, n as isize)?;
    let k = ctx.offsets.len();
    let row = exec.map(np, |i| {
        let mut x = [0.0; MAX_ARITY];
        gather(ens, &ctx.offsets, n as isize, i, &mut x);
        let s = ctx.coeffs.diffusion(&x[..k], &mus);
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::non_finite("diffusion", s).at(n, i))
        }
    });
    for s in row {
        st.sigma.push(s?);
    }
    Ok(())
}

fn check_frontier(ens: &EnsembleState, n: usize) -> Result<()> {
    if ens.frontier() != n as isize {
        return Err(Error::Sequencing {
            node: n as isize,
            frontier: ens.frontier(),
        });
    }
    if n >= ens.grid().steps() {
        return Err(config_err("step index beyond the horizon"));
    }
    Ok(())
}

fn step_general<E, I, L>(
    exec: &E,
    ctx: &DelayStepContext<'_, I, L>,
    st: &mut PathState,
    n: usize,
    milstein: bool,
) -> Result<()>
where
    E: Executor,
    I: Increments + ?Sized,
    L: IteratedIntegrals,
{
    check_frontier(&st.ensemble, n)?;
    ensure_sigma(exec, ctx, st, n)?;
    let levy = if milstein {
        Some(ctx.levy.ok_or_else(|| config_err("the Milstein scheme needs an iterated-integral source"))?)
    } else {
        None
    };
    let flags = ctx.coeffs.flags();
    let np = st.ensemble.n_particles();
    let k = ctx.offsets.len();
    let delta = ctx.grid.mesh();
    let ratio = ctx.ratio;
    let ni = n as isize;
    let a = (n * ratio) as isize;

    let mut caches = Vec::new();
    if let (Some(levy), true) = (levy, flags.diffusion_uses_measure_grad) {
        for &d in &ctx.offsets {
            caches.push(if ni - (d as isize) < 0 {
                None
            } else {
                Some(levy.prepare_cross(n, ratio, d * ratio)?)
            });
        }
    }

    let ens = &st.ensemble;
    let state = &*st;
    let mus = views(ens, &ctx.offsets, ni)?;
    let row = exec.map(np, |i| -> Result<f64> {
        let mut x = [0.0; MAX_ARITY];
        gather(ens, &ctx.offsets, ni, i, &mut x);
        let x = &x[..k];
        let b = tame_drift(ctx.coeffs.drift(x, &mus), delta, ctx.taming).map_err(|e| e.at(n, i))?;
        let sig = state.sigma_tilde(ni, i);
        let dw = ctx.increments.increment(i, a, a + ratio as isize);
        let mut y = ens.at(ni, i) + b * delta + sig * dw;
        if let Some(levy) = levy {
            if flags.diffusion_uses_state_grad {
                for (l, &d) in ctx.offsets.iter().enumerate() {
                    let g = ctx.coeffs.diffusion_state_grad(l, x, &mus);
                    let st_l = state.sigma_tilde(ni - d as isize, i);
                    if g == 0.0 || st_l == 0.0 {
                        continue;
                    }
                    let area = if d == 0 {
                        levy.diagonal(i, n, ratio)
                    } else {
                        levy.own_delayed(i, n, ratio, d * ratio)?
                    };
                    y += g * st_l * area;
                }
            }
            if flags.diffusion_uses_measure_grad {
                for (l, &d) in ctx.offsets.iter().enumerate() {
                    let Some(cache) = caches[l].as_ref() else {
                        continue;
                    };
                    let q = ni - d as isize;
                    let mut acc = 0.0;
                    for j in 0..np {
                        let h = ctx.coeffs.diffusion_measure_grad(l, x, &mus, ens.at(q, j));
                        let st_j = state.sigma_tilde(q, j);
                        if h == 0.0 || st_j == 0.0 {
                            continue;
                        }
                        let area = if j == i && d == 0 {
                            levy.diagonal(i, n, ratio)
                        } else {
                            levy.cross(cache, j, i)?
                        };
                        acc += h * st_j * area;
                    }
                    y += acc / np as f64;
                }
            }
        }
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::non_finite("state", y).at(n, i))
        }
    });
    let row: Vec<f64> = row.into_iter().collect::<Result<_>>()?;
    st.ensemble.commit(&row)
}

/// One tamed Euler–Maruyama step from node `n` to `n + 1`.
pub fn step_euler<E, I, L>(exec: &E, ctx: &DelayStepContext<'_, I, L>, st: &mut PathState, n: usize) -> Result<()>
where
    E: Executor,
    I: Increments + ?Sized,
    L: IteratedIntegrals,
{
    step_general(exec, ctx, st, n, false)
}

/// One tamed Milstein step from node `n` to `n + 1`, including the
/// delayed-state and, when the model flags it, the L-derivative terms.
pub fn step_milstein<E, I, L>(exec: &E, ctx: &DelayStepContext<'_, I, L>, st: &mut PathState, n: usize) -> Result<()>
where
    E: Executor,
    I: Increments + ?Sized,
    L: IteratedIntegrals,
{
    step_general(exec, ctx, st, n, true)
}

/// The coarse operator `𝒮(y, y_τ, y_2τ, μ, δ, ΔW, ΔW·ΔW_τ)`.
///
/// `y_2tau` is only read when `dw_product` is non-zero, which never happens
/// while the delayed increment lies before time 0.
#[allow(clippy::too_many_arguments)]
pub fn antithetic_operator(
    model: &dyn OnePointDelayModel,
    taming: Taming,
    y: f64,
    y_tau: f64,
    y_2tau: Option<f64>,
    mu: &MeasureView<'_>,
    delta: f64,
    dw: f64,
    dw_product: f64,
) -> Result<f64> {
    let b = tame_drift(model.drift(y, mu), delta, taming)?;
    let s = model.diffusion(y, y_tau);
    let mut out = y + b * delta + s * dw + s * model.diffusion_grad1(y, y_tau) * 0.5 * (dw * dw - delta);
    if dw_product != 0.0 {
        let y2 = y_2tau.ok_or_else(|| config_err("𝒮 needs Y(t - 2τ) for a non-zero delayed increment"))?;
        out += model.diffusion(y_tau, y2) * model.diffusion_grad2(y, y_tau) * 0.5 * dw_product;
    }
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::non_finite("state", out))
    }
}

/// Fixed inputs of a one-point step.
pub struct OnePointContext<'a, I: Increments + ?Sized> {
    model: &'a dyn OnePointDelayModel,
    grid: TimeGrid,
    delay: usize,
    taming: Taming,
    increments: &'a I,
    ratio: usize,
}

impl<'a, I: Increments + ?Sized> OnePointContext<'a, I> {
    pub fn new(
        model: &'a dyn OnePointDelayModel,
        delay: &DelaySpec,
        grid: &TimeGrid,
        taming: Taming,
        increments: &'a I,
    ) -> Result<Self> {
        if delay.k() != 2 {
            return Err(config_err("the coarse operator needs offsets (0, -τ)"));
        }
        let d = delay.offset_steps(grid)?[1];
        let ratio = lattice_ratio(increments, grid)?;
        Ok(Self {
            model,
            grid: *grid,
            delay: d,
            taming,
            increments,
            ratio,
        })
    }
}

/// One application of `𝒮` per particle from node `n` to `n + 1`.
pub fn step_antithetic_coarse<E, I>(exec: &E, ctx: &OnePointContext<'_, I>, ens: &mut EnsembleState, n: usize) -> Result<()>
where
    E: Executor,
    I: Increments + ?Sized,
{
    check_frontier(ens, n)?;
    let ni = n as isize;
    let d = ctx.delay as isize;
    let ratio = ctx.ratio as isize;
    let a = ni * ratio;
    let delta = ctx.grid.mesh();
    let e = &*ens;
    let mu = e.measure_view(ni)?;
    let row = exec.map(e.n_particles(), |i| -> Result<f64> {
        let dw = ctx.increments.increment(i, a, a + ratio);
        let dwd = if ni - d < 0 {
            0.0
        } else {
            ctx.increments.increment(i, a - d * ratio, a - d * ratio + ratio)
        };
        let y2 = if ni - d >= 0 { Some(e.at(ni - 2 * d, i)) } else { None };
        antithetic_operator(ctx.model, ctx.taming, e.at(ni, i), e.at(ni - d, i), y2, &mu, delta, dw, dw * dwd)
            .map_err(|err| err.at(n, i))
    });
    let row: Vec<f64> = row.into_iter().collect::<Result<_>>()?;
    ens.commit(&row)
}

/// Time-stepping method selected by configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    /// Milstein with delayed Lévy areas from the truncated Fourier series.
    Milstein,
    /// Milstein with the Lévy area set to zero, for general coefficients.
    ZeroLevyMilstein,
    /// The coarse operator `𝒮` for one-point delay models.
    AntitheticCoarse,
}

impl Scheme {
    pub fn id(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Milstein => "milstein",
            Scheme::ZeroLevyMilstein => "zero-levy-milstein",
            Scheme::AntitheticCoarse => "antithetic-coarse",
        }
    }

    /// Taming under which the stepper's moment bounds are proved:
    /// [`Taming::Scheme2`] for the antithetic family, [`Taming::Scheme1`] otherwise.
    pub fn default_taming(self) -> Taming {
        match self {
            Scheme::AntitheticCoarse => Taming::Scheme2,
            _ => Taming::Scheme1,
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Scheme::Euler, Scheme::Milstein, Scheme::ZeroLevyMilstein, Scheme::AntitheticCoarse]
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| config_err(format!("unknown stepper `{s}`")))
    }
}

/// Truncation rule for Fourier Lévy areas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// `r = ceil(M^{1/2})` with `M` the number of lattice steps on `[0, T]`.
    #[default]
    SqrtSteps,
    /// `r = ceil(δ^{-1/2})` with `δ` the lattice mesh.
    InverseSqrtMesh,
    Fixed(usize),
}

impl Truncation {
    pub fn resolve(self, lattice_steps: usize, lattice_mesh: f64) -> usize {
        match self {
            Truncation::SqrtSteps => (math::ceil(math::sqrt(lattice_steps as f64)) as usize).max(1),
            Truncation::InverseSqrtMesh => default_truncation(lattice_mesh),
            Truncation::Fixed(r) => r.max(1),
        }
    }
}

/// Everything needed to simulate a particle system except the noise and the grid.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    pub model: ModelHandle,
    pub delay: DelaySpec,
    pub scheme: Scheme,
    pub taming: Taming,
    pub truncation: Truncation,
    pub initial: InitialSegment,
    pub max_pairs: usize,
}

/// Iterated-integral source matching a simulator's scheme.
pub enum Areas<'a, I: Increments + ?Sized> {
    None,
    Source(LevyAreaSource<'a, I>),
}

impl PathSimulator {
    pub fn new(model: ModelHandle, delay: DelaySpec, scheme: Scheme, taming: Taming) -> Self {
        Self {
            model,
            delay,
            scheme,
            taming,
            truncation: Truncation::default(),
            initial: InitialSegment::Zero,
            max_pairs: 1 << 20,
        }
    }

    /// Checks model/scheme compatibility and grid alignment.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        self.delay.validate_against(grid)?;
        if self.scheme == Scheme::AntitheticCoarse {
            if self.model.as_one_point().is_none() {
                return Err(config_err(format!(
                    "model `{}` does not have the one-point delay shape required by the antithetic-coarse stepper",
                    self.model.id()
                )));
            }
            if self.delay.k() != 2 {
                return Err(config_err("the antithetic-coarse stepper needs offsets (0, -τ)"));
            }
        } else if self.model.coefficients().arity() != self.delay.k() {
            return Err(config_err(format!(
                "model `{}` expects {} offsets, {} configured",
                self.model.id(),
                self.model.coefficients().arity(),
                self.delay.k()
            )));
        }
        Ok(())
    }

    /// Builds the iterated-integral source shared by all resolutions
    /// driven by `incs`.
    pub fn areas<'a, E: Executor, I: Increments + ?Sized>(&self, exec: &E, incs: &'a I) -> Result<Areas<'a, I>> {
        let mode = match self.scheme {
            Scheme::Euler | Scheme::AntitheticCoarse => return Ok(Areas::None),
            Scheme::ZeroLevyMilstein => LevyMode::ZeroOffDiagonal,
            Scheme::Milstein => LevyMode::Fourier {
                r: self.truncation.resolve(incs.fine_steps(), incs.fine_mesh()),
            },
        };
        let fine = TimeGrid::new(self.delay.horizon(), self.delay.tau(), incs.fine_steps(), 0)?;
        let delays = self.delay.offset_steps(&fine)?;
        Ok(Areas::Source(LevyAreaSource::new(exec, incs, mode, &delays)?))
    }

    /// Simulates on `grid` driven by `incs`; `areas` must come from [`PathSimulator::areas`] on `incs`.
    pub fn run<E: Executor, I: Increments + ?Sized>(
        &self,
        exec: &E,
        incs: &I,
        areas: &Areas<'_, I>,
        grid: &TimeGrid,
    ) -> Result<EnsembleState> {
        self.validate(grid)?;
        let ens = init_ensemble(&self.initial, incs.n_particles(), grid, incs.seed())?;
        match self.scheme {
            Scheme::AntitheticCoarse => {
                let model = self.model.as_one_point().expect("validated");
                let ctx = OnePointContext::new(model.as_ref(), &self.delay, grid, self.taming, incs)?;
                let mut ens = ens;
                for n in 0..grid.steps() {
                    step_antithetic_coarse(exec, &ctx, &mut ens, n)?;
                }
                Ok(ens)
            }
            scheme => {
                let levy = match areas {
                    Areas::Source(s) => Some(s),
                    Areas::None => None,
                };
                let ctx = DelayStepContext::new(
                    self.model.coefficients().as_ref(),
                    &self.delay,
                    grid,
                    self.taming,
                    incs,
                    levy,
                    self.max_pairs,
                )?;
                let mut st = PathState::new(ens);
                let milstein = scheme != Scheme::Euler;
                for n in 0..grid.steps() {
                    step_general(exec, &ctx, &mut st, n, milstein)?;
                }
                Ok(st.ensemble)
            }
        }
    }

    /// Samples a lattice on `grid` and simulates on it.
    pub fn simulate<E: Executor>(&self, exec: &E, seed: u64, n: usize, grid: &TimeGrid) -> Result<EnsembleState> {
        let lattice = sample_lattice(seed, n, grid)?;
        let areas = self.areas(exec, &lattice)?;
        self.run(exec, &lattice, &areas, grid)
    }
}

/// Output of [`run_antithetic_pair`].
#[derive(Debug, Clone)]
pub struct AntitheticPair {
    pub fine: EnsembleState,
    pub antithetic: EnsembleState,
    pub coarse: EnsembleState,
}

impl AntitheticPair {
    /// `Ȳ^f = (Y^f + Y^a)/2` at the coarse nodes `0..=M_coarse`, node-major.
    pub fn averaged_at_coarse_nodes(&self) -> Result<Vec<Vec<f64>>> {
        (0..=self.coarse.grid().steps() as isize)
            .map(|q| {
                let f = self.fine.node(2 * q)?;
                let a = self.antithetic.node(2 * q)?;
                Ok(f.iter().zip(a).map(|(x, y)| 0.5 * (x + y)).collect())
            })
            .collect()
    }

    pub fn averaged_terminal(&self) -> Vec<f64> {
        self.fine
            .terminal()
            .iter()
            .zip(self.antithetic.terminal())
            .map(|(x, y)| 0.5 * (x + y))
            .collect()
    }

    /// Particle-step updates over all three paths.
    pub fn work(&self) -> u64 {
        self.fine.kernel_calls() + self.antithetic.kernel_calls() + self.coarse.kernel_calls()
    }
}

/// Runs the antithetic triple on one lattice at level `level ≥ 1`.
///
/// The lattice lives on `grid(level)` (mesh `δ/2`); `Y^f` steps it directly,
/// `Y^a` steps its antithetic view, and `Y^c` steps `grid(level − 1)` (mesh
/// `δ`) on pairwise sums of the same increments.
pub fn run_antithetic_pair(
    sim: &PathSimulator,
    hierarchy: &LevelHierarchy,
    seed: u64,
    level: usize,
    n: usize,
) -> Result<AntitheticPair> {
    if level == 0 {
        return Err(config_err("the antithetic pair needs level >= 1"));
    }
    let fine_grid = hierarchy.grid(level);
    let lattice = sample_lattice(seed, n, &fine_grid)?;
    antithetic_pair_on(sim, hierarchy, &lattice, level)
}

/// [`run_antithetic_pair`] on a given lattice.
pub fn antithetic_pair_on(
    sim: &PathSimulator,
    hierarchy: &LevelHierarchy,
    lattice: &BrownianLattice,
    level: usize,
) -> Result<AntitheticPair> {
    let exec = Sequential;
    let fine_grid = hierarchy.grid(level);
    let coarse_grid = hierarchy.grid(level - 1);
    let view = antithetic_view(lattice, 2, fine_grid.delay_steps())?;
    let areas = sim.areas(&exec, lattice)?;
    let fine = sim.run(&exec, lattice, &areas, &fine_grid)?;
    let coarse = sim.run(&exec, lattice, &areas, &coarse_grid)?;
    let view_areas = sim.areas(&exec, &view)?;
    let antithetic = sim.run(&exec, &view, &view_areas, &fine_grid)?;
    Ok(AntitheticPair {
        fine,
        antithetic,
        coarse,
    })
}
