//! Particle ensembles on the extended grid `[-τ, T]`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{config_err, Error, Result};
use crate::grid::TimeGrid;
use crate::math;
use crate::model::MeasureView;
use crate::rng::{derive_seed, domain};
use crate::stats::CompensatedSum;

/// Piecewise-linear function through `(times[q], values[q])`, constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::SizeMismatch {
                left: times.len(),
                right: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(config_err("interpolation nodes must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        let last = ts.len() - 1;
        if t >= ts[last] {
            return self.values[last];
        }
        let q = ts.partition_point(|&s| s <= t) - 1;
        let w = (t - ts[q]) / (ts[q + 1] - ts[q]);
        self.values[q] + w * (self.values[q + 1] - self.values[q])
    }
}

/// Initial data on `[-τ, 0]`.
#[derive(Clone, Default)]
pub enum InitialSegment {
    /// `ξ ≡ 0`.
    #[default]
    Zero,
    /// A deterministic function of `θ`, shared by all particles.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Linear interpolation of sampled values, shared by all particles.
    Samples(PiecewiseLinear),
    /// Independent random segments: `f(particle_seed, θ)`, with the particle
    /// seed derived from the ensemble seed and the particle index.
    PerParticle(Arc<dyn Fn(u64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSegment::Zero => f.write_str("Zero"),
            InitialSegment::Function(_) => f.write_str("Function(..)"),
            InitialSegment::Samples(p) => f.debug_tuple("Samples").field(p).finish(),
            InitialSegment::PerParticle(_) => f.write_str("PerParticle(..)"),
        }
    }
}

impl InitialSegment {
    fn value(&self, seed: u64, particle: usize, theta: f64) -> f64 {
        match self {
            InitialSegment::Zero => 0.0,
            InitialSegment::Function(f) => f(theta),
            InitialSegment::Samples(p) => p.eval(theta),
            InitialSegment::PerParticle(f) => {
                f(derive_seed(seed, &[domain::INITIAL, particle as u64]), theta)
            }
        }
    }
}

/// Particle values at every node of `[-τ, T]` up to the frontier, with
/// per-node mean and second moment computed at finalization.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    n: usize,
    grid: TimeGrid,
    /// Node-major: `values[(q + M') * N + i]`.
    values: Vec<f64>,
    summaries: Vec<(f64, f64)>,
    frontier: isize,
    kernel_calls: u64,
}

/// Fills nodes `-M'..=0` from `xi`; `seed` feeds random initial segments.
pub fn init_ensemble(
    xi: &InitialSegment,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<EnsembleState> {
    if n == 0 {
        return Err(config_err("at least one particle is required"));
    }
    let md = grid.delay_steps();
    let total = md + grid.steps() + 1;
    let mut state = EnsembleState {
        n,
        grid: *grid,
        values: Vec::with_capacity(total * n),
        summaries: Vec::with_capacity(total),
        frontier: -(md as isize) - 1,
        kernel_calls: 0,
    };
    for q in -(md as isize)..=0 {
        let theta = grid.time(q);
        let row: Vec<f64> = (0..n).map(|i| xi.value(seed, i, theta)).collect();
        if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "initial segment",
                value: v,
                step: None,
                particle: Some(i),
            });
        }
        state.push_row(&row);
    }
    Ok(state)
}

impl EnsembleState {
    fn push_row(&mut self, row: &[f64]) {
        let mut s = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for &x in row {
            s.add(x);
            s2.add(x * x);
        }
        let nf = self.n as f64;
        self.summaries.push((s.value() / nf, s2.value() / nf));
        self.values.extend_from_slice(row);
        self.frontier += 1;
    }

    /// Finalizes node `frontier + 1` from one value per particle.
    pub fn commit(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n {
            return Err(Error::SizeMismatch {
                left: self.n,
                right: row.len(),
            });
        }
        if self.frontier >= self.grid.steps() as isize {
            return Err(config_err("ensemble already reached the horizon"));
        }
        if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "state",
                value: v,
                step: Some(self.frontier as usize),
                particle: Some(i),
            });
        }
        self.push_row(row);
        self.kernel_calls += self.n as u64;
        Ok(())
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn frontier(&self) -> isize {
        self.frontier
    }

    /// Particle-step updates performed so far.
    pub fn kernel_calls(&self) -> u64 {
        self.kernel_calls
    }

    fn check_node(&self, q: isize) -> Result<usize> {
        let md = self.grid.delay_steps() as isize;
        if q > self.frontier {
            return Err(Error::Sequencing {
                node: q,
                frontier: self.frontier,
            });
        }
        if q < -md {
            return Err(config_err(format!("node {q} lies before the initial segment")));
        }
        Ok((q + md) as usize)
    }

    /// Values of all particles at node `q`.
    pub fn node(&self, q: isize) -> Result<&[f64]> {
        let k = self.check_node(q)?;
        Ok(&self.values[k * self.n..(k + 1) * self.n])
    }

    /// Unchecked read used by the steppers after validating their index range.
    #[inline]
    pub(crate) fn at(&self, q: isize, i: usize) -> f64 {
        let md = self.grid.delay_steps() as isize;
        debug_assert!(q >= -md && q <= self.frontier, "node {q} read out of range");
        self.values[(q + md) as usize * self.n + i]
    }

    /// The empirical measure at node `q`.
    pub fn measure_view(&self, q: isize) -> Result<MeasureView<'_>> {
        let k = self.check_node(q)?;
        let (m, m2) = self.summaries[k];
        Ok(MeasureView::with_summary(&self.values[k * self.n..(k + 1) * self.n], m, m2))
    }

    /// Values at the last finalized node.
    pub fn terminal(&self) -> &[f64] {
        self.node(self.frontier).expect("frontier is always readable")
    }

    /// Trajectory of particle `i` over finalized nodes, as `(node, value)`.
    pub fn trajectory(&self, i: usize) -> Vec<(isize, f64)> {
        let md = self.grid.delay_steps() as isize;
        (-md..=self.frontier).map(|q| (q, self.at(q, i))).collect()
    }
}

/// `W₂` distance between equal-size one-dimensional empirical measures.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let mut s = CompensatedSum::default();
    for (u, v) in x.iter().zip(&y) {
        s.add((u - v) * (u - v));
    }
    Ok(math::sqrt(s.value() / a.len() as f64))
}

/// Empirical `E|Y(t_q)|^p` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub p: f64,
    /// `(node, time, moment)` for nodes `0..=frontier`.
    pub rows: Vec<(isize, f64, f64)>,
    pub running_max: f64,
    pub all_finite: bool,
}

pub fn moment_report(ensemble: &EnsembleState, p: f64) -> Result<MomentReport> {
    if !(p >= 1.0) {
        return Err(config_err(format!("moment exponent must be >= 1, got {p}")));
    }
    let mut rows = Vec::new();
    let mut running_max: f64 = 0.0;
    let mut all_finite = true;
    for q in 0..=ensemble.frontier() {
        let vals = ensemble.node(q)?;
        let mut s = CompensatedSum::default();
        for &x in vals {
            s.add(math::powf(x.abs(), p));
        }
        let m = s.value() / vals.len() as f64;
        all_finite &= m.is_finite();
        if m.is_finite() {
            running_max = running_max.max(m);
        }
        rows.push((q, ensemble.grid().time(q), m));
    }
    Ok(MomentReport {
        p,
        rows,
        running_max: if all_finite { running_max } else { f64::INFINITY },
        all_finite,
    })
}
