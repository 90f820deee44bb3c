//! Brownian lattices, the antithetic half-step swap, and iterated integrals.
//!
//! Increments are stored once at the finest mesh of a computation. Coarser
//! steps sum consecutive fine increments, and anything referring to negative
//! times is zero: the driving noise starts at `t = 0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{config_err, Error, Result};
use crate::exec::Executor;
use crate::grid::TimeGrid;
use crate::math;
use crate::rng::{self, domain};

/// Read access to per-particle fine-mesh Brownian increments.
pub trait Increments: Sync {
    fn n_particles(&self) -> usize;
    fn fine_steps(&self) -> usize;
    fn fine_mesh(&self) -> f64;
    /// Seed the increments were drawn from.
    fn seed(&self) -> u64;

    /// Lattice index whose noise appears at position `m` of this view.
    fn source_index(&self, m: isize) -> isize {
        m
    }

    /// Fine increment of particle `i` over `[t_m, t_{m+1})`; zero for `m < 0`.
    fn fine(&self, i: usize, m: isize) -> f64;

    /// Sum of fine increments over fine indices `[a, b)`, summed in order.
    fn increment(&self, i: usize, a: isize, b: isize) -> f64 {
        let mut s = 0.0;
        for m in a.max(0)..b {
            s += self.fine(i, m);
        }
        s
    }
}

/// Independent Brownian increments for `N` particles on a uniform mesh of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    seed: u64,
    n_particles: usize,
    fine_steps: usize,
    fine_mesh: f64,
    /// Step-major: `inc[m * N + i]`.
    inc: Vec<f64>,
}

/// Draws a lattice on `grid`. Particle `i` uses its own stream keyed by
/// `(seed, i)`, so its path does not depend on `n`.
pub fn sample_lattice(seed: u64, n: usize, grid: &TimeGrid) -> Result<BrownianLattice> {
    if n == 0 {
        return Err(config_err("at least one particle is required"));
    }
    let steps = grid.steps();
    let sd = math::sqrt(grid.mesh());
    let mut inc = vec![0.0; steps * n];
    for i in 0..n {
        let mut r = rng::keyed_rng(seed, &[domain::LATTICE, i as u64]);
        for m in 0..steps {
            inc[m * n + i] = sd * rng::normal(&mut r);
        }
    }
    Ok(BrownianLattice {
        seed,
        n_particles: n,
        fine_steps: steps,
        fine_mesh: grid.mesh(),
        inc,
    })
}

impl BrownianLattice {
    /// Builds a lattice from explicit per-particle increments.
    pub fn from_increments(seed: u64, fine_mesh: f64, paths: &[Vec<f64>]) -> Result<Self> {
        let n = paths.len();
        if n == 0 || !(fine_mesh > 0.0) {
            return Err(config_err("need at least one path and a positive mesh"));
        }
        let steps = paths[0].len();
        if let Some(p) = paths.iter().find(|p| p.len() != steps) {
            return Err(Error::SizeMismatch {
                left: steps,
                right: p.len(),
            });
        }
        let mut inc = vec![0.0; steps * n];
        for (i, p) in paths.iter().enumerate() {
            for (m, &v) in p.iter().enumerate() {
                inc[m * n + i] = v;
            }
        }
        Ok(Self {
            seed,
            n_particles: n,
            fine_steps: steps,
            fine_mesh,
            inc,
        })
    }

    /// Increments of particle `i` in time order.
    pub fn path(&self, i: usize) -> Vec<f64> {
        (0..self.fine_steps).map(|m| self.inc[m * self.n_particles + i]).collect()
    }
}

impl Increments for BrownianLattice {
    fn n_particles(&self) -> usize {
        self.n_particles
    }

    fn fine_steps(&self) -> usize {
        self.fine_steps
    }

    fn fine_mesh(&self) -> f64 {
        self.fine_mesh
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn fine(&self, i: usize, m: isize) -> f64 {
        if m < 0 {
            0.0
        } else {
            self.inc[m as usize * self.n_particles + i]
        }
    }
}

/// The lattice with the two halves of every coarse step exchanged.
#[derive(Debug, Clone, Copy)]
pub struct AntitheticView<'a, I: Increments + ?Sized> {
    base: &'a I,
}

/// Wraps `lattice` so that within each coarse step of `coarse_step = 2` fine
/// steps the half-increments are swapped. The fine delay must be an even
/// number of fine steps so delayed references swap consistently.
pub fn antithetic_view<I: Increments + ?Sized>(
    lattice: &I,
    coarse_step: usize,
    delay_fine_steps: usize,
) -> Result<AntitheticView<'_, I>> {
    if coarse_step != 2 {
        return Err(config_err(format!(
            "the antithetic swap needs two half-steps per coarse step, got {coarse_step}"
        )));
    }
    if lattice.fine_steps() % 2 != 0 {
        return Err(config_err("fine lattice has an odd number of steps"));
    }
    if delay_fine_steps % 2 != 0 {
        return Err(config_err(
            "delay is not a multiple of the coarse mesh; the antithetic swap would misalign",
        ));
    }
    Ok(AntitheticView { base: lattice })
}

impl<I: Increments + ?Sized> Increments for AntitheticView<'_, I> {
    fn n_particles(&self) -> usize {
        self.base.n_particles()
    }

    fn fine_steps(&self) -> usize {
        self.base.fine_steps()
    }

    fn fine_mesh(&self) -> f64 {
        self.base.fine_mesh()
    }

    fn seed(&self) -> u64 {
        self.base.seed()
    }

    fn source_index(&self, m: isize) -> isize {
        if m < 0 {
            m
        } else {
            self.base.source_index(m ^ 1)
        }
    }

    #[inline]
    fn fine(&self, i: usize, m: isize) -> f64 {
        if m < 0 {
            0.0
        } else {
            self.base.fine(i, m ^ 1)
        }
    }
}

/// `∫∫ dW dW` over a step of length `delta` for a single path: `((ΔW)² − δ)/2`.
#[inline]
pub fn levy_area_exact_diagonal(dw: f64, delta: f64) -> f64 {
    0.5 * (dw * dw - delta)
}

/// Chen's relation for two adjacent intervals.
#[inline]
pub fn levy_area_chen(i_left: f64, i_right: f64, db_left: f64, dw_right: f64) -> f64 {
    i_left + i_right + db_left * dw_right
}

/// `Σ_{n>r} n⁻²`.
pub fn tail_inv_squares(r: usize) -> f64 {
    let mut x = (r + 1) as f64;
    let mut s = 0.0;
    while x < 24.0 {
        s += 1.0 / (x * x);
        x += 1.0;
    }
    let y = 1.0 / x;
    let y2 = y * y;
    let asym = y
        + 0.5 * y2
        + y2 * y * (1.0 / 6.0 + y2 * (-1.0 / 30.0 + y2 * (1.0 / 42.0 + y2 * (-1.0 / 30.0))));
    s + asym
}

/// Variance of the truncated-away part of the zero mode `a_0`.
pub fn zero_mode_tail_variance(delta: f64, r: usize) -> f64 {
    2.0 * delta / (PI * PI) * tail_inv_squares(r)
}

/// Variance of the truncated-away part of the Lévy-area series.
pub fn series_tail_variance(delta: f64, r: usize) -> f64 {
    delta * delta / (2.0 * PI * PI) * tail_inv_squares(r)
}

/// Default truncation `r = ceil(δ^{-1/2})`.
pub fn default_truncation(delta: f64) -> usize {
    (math::ceil(1.0 / math::sqrt(delta)) as usize).max(1)
}

/// Identity of a Brownian segment: particle, lattice resolution and step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentId {
    pub particle: usize,
    pub resolution: usize,
    pub step: isize,
}

impl SegmentId {
    fn key(&self) -> [u64; 4] {
        [
            domain::BRIDGE,
            self.particle as u64,
            self.resolution as u64,
            rng::idx(self.step),
        ]
    }
}

/// Fourier coefficients of the Brownian bridge on one segment:
/// `W(t) − (t/δ)W(δ) = a_0/2 + Σ a_n cos(2πnt/δ) + b_n sin(2πnt/δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeCoefficients {
    pub segment: SegmentId,
    pub length: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Truncated zero mode with its Gaussian tail correction.
    pub a0: f64,
}

impl BridgeCoefficients {
    /// Draws `r` coefficient pairs for `segment`, deterministically in `(seed, segment)`.
    ///
    /// Coefficient `n` does not depend on `r`: the tail variable is drawn
    /// first, then the pairs in increasing `n`.
    pub fn sample(seed: u64, segment: SegmentId, r: usize, length: f64) -> Self {
        let mut g = rng::keyed_rng(seed, &segment.key());
        let xi = rng::normal(&mut g);
        let mut a = Vec::with_capacity(r);
        let mut b = Vec::with_capacity(r);
        let mut sum_a = 0.0;
        for n in 1..=r {
            let sd = math::sqrt(length / (2.0 * PI * PI)) / n as f64;
            let an = sd * rng::normal(&mut g);
            let bn = sd * rng::normal(&mut g);
            sum_a += an;
            a.push(an);
            b.push(bn);
        }
        let a0 = -2.0 * sum_a + math::sqrt(zero_mode_tail_variance(length, r)) * xi;
        Self {
            segment,
            length,
            a,
            b,
            a0,
        }
    }

    /// Coefficients of a path at negative times (identically zero).
    pub fn zero(segment: SegmentId, r: usize, length: f64) -> Self {
        Self {
            segment,
            length,
            a: vec![0.0; r],
            b: vec![0.0; r],
            a0: 0.0,
        }
    }

    pub fn r(&self) -> usize {
        self.a.len()
    }
}

/// Truncated Fourier approximation of `∫_0^δ ∫_0^s dX(u) dY(s)`, where `X`
/// (the inner path) has bridge coefficients `inner` and increment `dx`, and
/// `Y` (the outer path) has `outer` and `dy`:
///
/// `½ dx dy + ½(a0_X dy − a0_Y dx) + π Σ_{n≤r} n (a_n b'_n − b_n a'_n) + √v_r z`
///
/// with `v_r` the series tail variance and `tail_normal = z`.
pub fn levy_area_fourier(
    inner: &BridgeCoefficients,
    dx: f64,
    outer: &BridgeCoefficients,
    dy: f64,
    r: usize,
    tail_normal: f64,
) -> Result<f64> {
    if inner.segment == outer.segment {
        return Err(Error::LevyPrecondition(format!(
            "segment {:?} paired with itself; use the exact diagonal",
            inner.segment
        )));
    }
    let scale = inner.length.abs().max(outer.length.abs());
    if (inner.length - outer.length).abs() > 1e-12 * scale {
        return Err(Error::LevyPrecondition(format!(
            "segment lengths differ: {} vs {}",
            inner.length, outer.length
        )));
    }
    if r > inner.r() || r > outer.r() {
        return Err(Error::LevyPrecondition(format!(
            "truncation {r} exceeds the {} sampled coefficients",
            inner.r().min(outer.r())
        )));
    }
    let mut series = 0.0;
    for n in 0..r {
        series += (n + 1) as f64 * (inner.a[n] * outer.b[n] - inner.b[n] * outer.a[n]);
    }
    let tail = math::sqrt(series_tail_variance(inner.length, r)) * tail_normal;
    Ok(0.5 * dx * dy + 0.5 * (inner.a0 * dy - outer.a0 * dx) + PI * series + tail)
}

/// How iterated integrals other than the same-path diagonal are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevyMode {
    /// Only same-path, zero-delay integrals are available.
    ExactDiagonal,
    /// Truncated Fourier series with `r` terms plus tail corrections.
    Fourier { r: usize },
    /// Lévy area set to zero: the integral is replaced by `½ ΔX ΔY`.
    ZeroOffDiagonal,
}

/// Tail-variable seed parts for an (inner, outer) fine-segment pair.
fn tail_key(inner_particle: usize, outer_particle: usize, inner: isize, outer: isize) -> [u64; 5] {
    [
        domain::TAIL,
        inner_particle as u64,
        outer_particle as u64,
        rng::idx(inner),
        rng::idx(outer),
    ]
}

/// Iterated integrals for one lattice (or view), with coarse steps obtained
/// from fine ones by Chen's relation.
pub struct LevyAreaSource<'a, I: Increments + ?Sized> {
    incs: &'a I,
    mode: LevyMode,
    /// `(fine delay, step-major table of own fine-step areas)`.
    tables: Vec<(usize, Vec<f64>)>,
}

/// Bridge coefficients of every particle for the fine segments one coarse step touches.
pub struct CrossCache {
    first_fine: isize,
    ratio: usize,
    delay_fine: usize,
    /// `outer[q * N + i]`, `inner[q * N + j]` for `q in 0..ratio`.
    outer: Vec<BridgeCoefficients>,
    inner: Vec<BridgeCoefficients>,
}

impl<'a, I: Increments + ?Sized> LevyAreaSource<'a, I> {
    /// Prepares the source. In Fourier mode the own-path fine-step areas for
    /// every non-zero fine delay in `delays_fine` are computed up front.
    pub fn new<E: Executor>(
        exec: &E,
        incs: &'a I,
        mode: LevyMode,
        delays_fine: &[usize],
    ) -> Result<Self> {
        let mut tables = Vec::new();
        if let LevyMode::Fourier { r } = mode {
            if r == 0 {
                return Err(config_err("Fourier truncation r must be at least 1"));
            }
            let mut ds: Vec<usize> = delays_fine.iter().copied().filter(|&d| d > 0).collect();
            ds.sort_unstable();
            ds.dedup();
            if !ds.is_empty() {
                let per_particle = exec.map(incs.n_particles(), |i| own_areas(incs, i, r, &ds));
                let n = incs.n_particles();
                let steps = incs.fine_steps();
                for (di, &d) in ds.iter().enumerate() {
                    let mut t = vec![0.0; steps * n];
                    for (i, rows) in per_particle.iter().enumerate() {
                        let rows = rows.as_ref().map_err(Clone::clone)?;
                        for m in 0..steps {
                            t[m * n + i] = rows[di][m];
                        }
                    }
                    tables.push((d, t));
                }
            }
        }
        Ok(Self { incs, mode, tables })
    }

    pub fn mode(&self) -> LevyMode {
        self.mode
    }

    pub fn increments(&self) -> &'a I {
        self.incs
    }

    /// `((ΔW)² − δ)/2` for particle `i` over grid step `n` of `ratio` fine steps.
    #[inline]
    pub fn diagonal(&self, i: usize, n: usize, ratio: usize) -> f64 {
        let a = (n * ratio) as isize;
        let dw = self.incs.increment(i, a, a + ratio as isize);
        levy_area_exact_diagonal(dw, ratio as f64 * self.incs.fine_mesh())
    }

    /// `∫∫ dW^i(u − τ_d) dW^i(s)` over grid step `n`, where the delay is
    /// `delay_fine` fine steps.
    pub fn own_delayed(&self, i: usize, n: usize, ratio: usize, delay_fine: usize) -> Result<f64> {
        if delay_fine == 0 {
            return Ok(self.diagonal(i, n, ratio));
        }
        let a = (n * ratio) as isize;
        let d = delay_fine as isize;
        match self.mode {
            LevyMode::ExactDiagonal => Err(Error::LevyPrecondition(
                "delayed iterated integral requested but no off-diagonal Lévy mode is configured"
                    .into(),
            )),
            LevyMode::ZeroOffDiagonal => {
                let dx = self.incs.increment(i, a - d, a + ratio as isize - d);
                let dy = self.incs.increment(i, a, a + ratio as isize);
                Ok(0.5 * dx * dy)
            }
            LevyMode::Fourier { .. } => {
                let table = &self
                    .tables
                    .iter()
                    .find(|(dd, _)| *dd == delay_fine)
                    .ok_or_else(|| {
                        Error::LevyPrecondition(format!("no area table for delay {delay_fine}"))
                    })?
                    .1;
                let n_p = self.incs.n_particles();
                let mut acc = 0.0;
                let mut total = 0.0;
                for q in 0..ratio as isize {
                    let m = a + q;
                    total += table[m as usize * n_p + i] + acc * self.incs.fine(i, m);
                    acc += self.incs.fine(i, m - d);
                }
                Ok(total)
            }
        }
    }

    /// Samples the bridge coefficients needed by [`LevyAreaSource::cross`] for grid step `n`.
    pub fn prepare_cross(&self, n: usize, ratio: usize, delay_fine: usize) -> Result<CrossCache> {
        let r = match self.mode {
            LevyMode::Fourier { r } => r,
            _ => 0,
        };
        let first = (n * ratio) as isize;
        let np = self.incs.n_particles();
        let len = self.incs.fine_mesh();
        let res = self.incs.fine_steps();
        let seed = self.incs.seed();
        let mut outer = Vec::new();
        let mut inner = Vec::new();
        if r > 0 {
            outer.reserve(ratio * np);
            inner.reserve(ratio * np);
            for q in 0..ratio as isize {
                for p in 0..np {
                    outer.push(coefficients(seed, p, res, self.incs.source_index(first + q), r, len));
                    inner.push(coefficients(
                        seed,
                        p,
                        res,
                        self.incs.source_index(first + q - delay_fine as isize),
                        r,
                        len,
                    ));
                }
            }
        }
        Ok(CrossCache {
            first_fine: first,
            ratio,
            delay_fine,
            outer,
            inner,
        })
    }

    /// `∫∫ dW^j(u − τ_d) dW^i(s)` over the step described by `cache`.
    pub fn cross(&self, cache: &CrossCache, j: usize, i: usize) -> Result<f64> {
        let a = cache.first_fine;
        let ratio = cache.ratio as isize;
        let d = cache.delay_fine as isize;
        if i == j {
            let n = (a / ratio) as usize;
            return self.own_delayed(i, n, cache.ratio, cache.delay_fine);
        }
        match self.mode {
            LevyMode::ExactDiagonal => Err(Error::LevyPrecondition(
                "cross-particle iterated integral requested but no off-diagonal Lévy mode is configured"
                    .into(),
            )),
            LevyMode::ZeroOffDiagonal => {
                let dx = self.incs.increment(j, a - d, a + ratio - d);
                let dy = self.incs.increment(i, a, a + ratio);
                Ok(0.5 * dx * dy)
            }
            LevyMode::Fourier { r } => {
                let np = self.incs.n_particles();
                let seed = self.incs.seed();
                let mut acc = 0.0;
                let mut total = 0.0;
                for q in 0..ratio {
                    let m = a + q;
                    let dx = self.incs.fine(j, m - d);
                    let dy = self.incs.fine(i, m);
                    let inner = &cache.inner[q as usize * np + j];
                    let outer = &cache.outer[q as usize * np + i];
                    let z = rng::normal(&mut rng::keyed_rng(
                        seed,
                        &tail_key(j, i, inner.segment.step, outer.segment.step),
                    ));
                    let piece = if m - d < 0 {
                        0.0
                    } else {
                        levy_area_fourier(inner, dx, outer, dy, r, z)?
                    };
                    total += piece + acc * dy;
                    acc += dx;
                }
                Ok(total)
            }
        }
    }
}

/// Iterated integrals as consumed by the Milstein stepper.
///
/// Indices are grid steps `n` of `ratio` fine steps each; delays are in fine steps.
pub trait IteratedIntegrals: Sync {
    type Cache: Sync;

    /// Same path, zero delay.
    fn diagonal(&self, i: usize, n: usize, ratio: usize) -> f64;
    /// Same path, delay `delay_fine > 0`.
    fn own_delayed(&self, i: usize, n: usize, ratio: usize, delay_fine: usize) -> Result<f64>;
    /// Per-step preparation for [`IteratedIntegrals::cross`].
    fn prepare_cross(&self, n: usize, ratio: usize, delay_fine: usize) -> Result<Self::Cache>;
    /// Inner path of particle `j` (delayed), outer path of particle `i`.
    fn cross(&self, cache: &Self::Cache, j: usize, i: usize) -> Result<f64>;
}

impl<I: Increments + ?Sized> IteratedIntegrals for LevyAreaSource<'_, I> {
    type Cache = CrossCache;

    fn diagonal(&self, i: usize, n: usize, ratio: usize) -> f64 {
        LevyAreaSource::diagonal(self, i, n, ratio)
    }

    fn own_delayed(&self, i: usize, n: usize, ratio: usize, delay_fine: usize) -> Result<f64> {
        LevyAreaSource::own_delayed(self, i, n, ratio, delay_fine)
    }

    fn prepare_cross(&self, n: usize, ratio: usize, delay_fine: usize) -> Result<CrossCache> {
        LevyAreaSource::prepare_cross(self, n, ratio, delay_fine)
    }

    fn cross(&self, cache: &CrossCache, j: usize, i: usize) -> Result<f64> {
        LevyAreaSource::cross(self, cache, j, i)
    }
}

fn coefficients(
    seed: u64,
    particle: usize,
    resolution: usize,
    step: isize,
    r: usize,
    length: f64,
) -> BridgeCoefficients {
    let seg = SegmentId {
        particle,
        resolution,
        step,
    };
    if step < 0 {
        BridgeCoefficients::zero(seg, r, length)
    } else {
        BridgeCoefficients::sample(seed, seg, r, length)
    }
}

/// Own-path fine-step areas of particle `i` for each delay in `delays`.
fn own_areas<I: Increments + ?Sized>(
    incs: &I,
    i: usize,
    r: usize,
    delays: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let steps = incs.fine_steps();
    let len = incs.fine_mesh();
    let res = incs.fine_steps();
    let seed = incs.seed();
    let coefs: Vec<BridgeCoefficients> = (0..steps as isize)
        .map(|m| coefficients(seed, i, res, incs.source_index(m), r, len))
        .collect();
    let mut out = Vec::with_capacity(delays.len());
    for &d in delays {
        let mut row = vec![0.0; steps];
        for m in d..steps {
            let inner = &coefs[m - d];
            let outer = &coefs[m];
            let z = rng::normal(&mut rng::keyed_rng(
                seed,
                &tail_key(i, i, inner.segment.step, outer.segment.step),
            ));
            row[m] = levy_area_fourier(
                inner,
                incs.fine(i, (m - d) as isize),
                outer,
                incs.fine(i, m as isize),
                r,
                z,
            )?;
        }
        out.push(row);
    }
    Ok(out)
}
