//! Validation of truncated Fourier Lévy areas against a fine Riemann-sum oracle.
//!
//! Each sample draws two independent Brownian paths on `[0, δ]` with `L`
//! substeps. The bridge coefficients of each path are computed exactly from
//! its piecewise-linear interpolant (via one FFT), so the truncated series
//! `½ΔXΔY + ½(a₀ΔY − a₀'ΔX) + π Σ_{n≤r} n(a_n b'_n − b_n a'_n)` can be
//! compared with the midpoint sum `Σ_k ½(X_k + X_{k+1}) ΔY_k`.
//!
//! The tail term `√v_r · z` needs the normal `z` that belongs to the same
//! paths. Conditionally on `X`, the residual of the truncated series is a
//! centred Gaussian linear functional of `ΔY`, whose variance `v_c` is
//! computed from its weights; `z` is taken to be the residual divided by
//! `√v_c`. The reported error is therefore the mismatch between the
//! residual and its rescaling to the nominal tail variance `v_r`.

use std::f64::consts::PI;
use std::sync::Arc;

use mkvmlmc_core::brownian::{levy_area_chen, levy_area_exact_diagonal, series_tail_variance};
use mkvmlmc_core::rng::{keyed_rng, normal};
use mkvmlmc_core::stats::CompensatedSum;
use mkvmlmc_core::Executor;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::AppError;

const LEVY_DOMAIN: u64 = 0x4c45_5659;
const CHEN_DOMAIN: u64 = 0x4348_454e;

#[derive(Debug, Clone, PartialEq)]
pub struct LevyValidation {
    pub delta: f64,
    pub substeps: usize,
    pub samples: usize,
    /// `(r, mean squared error)` in configuration order.
    pub mse: Vec<(usize, f64)>,
    /// Largest `|Chen(I_left, I_right) − I_whole|` over the samples.
    pub chen_residual: f64,
    /// Mean squared difference between the exact diagonal formula and the
    /// midpoint oracle shifted by `δ/2`.
    pub diagonal_mse: f64,
}

impl LevyValidation {
    pub fn mse_at(&self, r: usize) -> Option<f64> {
        self.mse.iter().find(|(q, _)| *q == r).map(|(_, m)| *m)
    }

    /// `MSE(r)/MSE(2r)` when both were computed.
    pub fn ratio(&self, r: usize) -> Option<f64> {
        Some(self.mse_at(r)? / self.mse_at(2 * r)?)
    }
}

/// Exact bridge coefficients of a piecewise-linear path.
struct Bridge {
    a: Vec<f64>,
    b: Vec<f64>,
    a0: f64,
    /// Path values `X_0 = 0, …, X_L`.
    x: Vec<f64>,
}

struct Oracle {
    delta: f64,
    substeps: usize,
    r_max: usize,
    fft: Arc<dyn Fft<f64>>,
    /// `F_n = (2/δ)·(−(1 − e^{−iθ_n}))/(ω_n² h)` for `n = 1..=r_max`.
    factor: Vec<Complex64>,
    /// Weights of `ΔY_k` in `a'_n` and `b'_n`, row `n − 1`.
    wa: Vec<Vec<f64>>,
    wb: Vec<Vec<f64>>,
    /// Weights of `ΔY_k` in `a'_0`.
    wa0: Vec<f64>,
}

impl Oracle {
    fn new(delta: f64, substeps: usize, r_max: usize) -> Self {
        let l = substeps;
        let h = delta / l as f64;
        let fft = FftPlanner::new().plan_fft_forward(l);
        let factor: Vec<Complex64> = (1..=r_max)
            .map(|n| {
                let theta = 2.0 * PI * n as f64 / l as f64;
                let omega = 2.0 * PI * n as f64 / delta;
                let one_minus = Complex64::new(1.0 - theta.cos(), theta.sin());
                -one_minus * (2.0 / delta) / (omega * omega * h)
            })
            .collect();
        let mut wa = Vec::with_capacity(r_max);
        let mut wb = Vec::with_capacity(r_max);
        for (idx, f) in factor.iter().enumerate() {
            let theta = 2.0 * PI * (idx + 1) as f64 / l as f64;
            let (row_a, row_b): (Vec<f64>, Vec<f64>) = (0..l)
                .map(|k| {
                    let e = f * Complex64::from_polar(1.0, -theta * k as f64);
                    (e.re, -e.im)
                })
                .unzip();
            wa.push(row_a);
            wb.push(row_b);
        }
        let wa0 = (0..l)
            .map(|k| 2.0 / delta * h * ((l as f64 - 1.0) / 2.0 - k as f64))
            .collect();
        Self {
            delta,
            substeps,
            r_max,
            fft,
            factor,
            wa,
            wb,
            wa0,
        }
    }

    fn h(&self) -> f64 {
        self.delta / self.substeps as f64
    }

    fn bridge(&self, dx: &[f64]) -> Bridge {
        let mut buf: Vec<Complex64> = dx.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        let (a, b) = self
            .factor
            .iter()
            .enumerate()
            .map(|(idx, f)| {
                let c = f * buf[idx + 1];
                (c.re, -c.im)
            })
            .unzip();
        let mut x = Vec::with_capacity(dx.len() + 1);
        x.push(0.0);
        let mut acc = 0.0;
        for &d in dx {
            acc += d;
            x.push(acc);
        }
        let l = dx.len() as f64;
        let end = acc;
        let bridge_at = |k: usize| x[k] - k as f64 / l * end;
        let mut s = 0.0;
        for k in 0..dx.len() {
            s += 0.5 * (bridge_at(k) + bridge_at(k + 1));
        }
        let a0 = 2.0 / self.delta * self.h() * s;
        Bridge { a, b, a0, x }
    }

    /// Squared errors for each `r` in `rs` on one pair of paths.
    fn sample(&self, dx: &[f64], dy: &[f64], rs: &[usize]) -> Vec<f64> {
        let l = self.substeps;
        let h = self.h();
        let bx = self.bridge(dx);
        let by = self.bridge(dy);
        let xd = bx.x[l];
        let yd = by.x[l];
        let mid: Vec<f64> = (0..l).map(|k| 0.5 * (bx.x[k] + bx.x[k + 1])).collect();
        let oracle: f64 = mid.iter().zip(dy).map(|(m, d)| m * d).sum();

        let head = 0.5 * xd * yd + 0.5 * (bx.a0 * yd - by.a0 * xd);
        let mut weights: Vec<f64> = self.wa0.iter().map(|w| 0.5 * xd + 0.5 * bx.a0 - 0.5 * xd * w).collect();
        let mut series = 0.0;
        let mut out = vec![0.0; rs.len()];
        for n in 1..=self.r_max {
            let (an, bn) = (bx.a[n - 1], bx.b[n - 1]);
            series += n as f64 * (an * by.b[n - 1] - bn * by.a[n - 1]);
            let (ca, cb) = (PI * n as f64 * an, PI * n as f64 * bn);
            for ((w, wb), wa) in weights.iter_mut().zip(&self.wb[n - 1]).zip(&self.wa[n - 1]) {
                *w += ca * wb - cb * wa;
            }
            for (slot, _) in rs.iter().enumerate().filter(|(_, &r)| r == n) {
                let low = head + PI * series;
                let residual = oracle - low;
                let vc = h * mid.iter().zip(&weights).map(|(m, w)| (m - w) * (m - w)).sum::<f64>();
                let vu = series_tail_variance(self.delta, n);
                let z = residual / vc.sqrt();
                let e = residual - vu.sqrt() * z;
                out[slot] = e * e;
            }
        }
        out
    }
}

fn brownian_steps(seed: u64, parts: &[u64], n: usize, h: f64) -> Vec<f64> {
    let mut g = keyed_rng(seed, parts);
    let sd = h.sqrt();
    (0..n).map(|_| sd * normal(&mut g)).collect()
}

fn midpoint_integral(dx: &[f64], dy: &[f64]) -> f64 {
    let mut x = 0.0;
    let mut s = 0.0;
    for (a, b) in dx.iter().zip(dy) {
        s += (x + 0.5 * a) * b;
        x += a;
    }
    s
}

/// Runs the validation for every truncation in `rs`.
pub fn validate<E: Executor>(
    exec: &E,
    seed: u64,
    delta: f64,
    rs: &[usize],
    substeps: usize,
    samples: usize,
) -> Result<LevyValidation, AppError> {
    let r_max = rs.iter().copied().max().unwrap_or(0);
    if rs.is_empty() || rs.contains(&0) || 2 * r_max > substeps || !(delta > 0.0) || samples < 2 {
        return Err(AppError::invalid(
            "Lévy validation needs delta > 0, 1 <= 2r <= substeps and at least 2 samples",
        ));
    }
    let oracle = Oracle::new(delta, substeps, r_max);
    let h = delta / substeps as f64;
    let per_sample = exec.map(samples, |s| {
        let dx = brownian_steps(seed, &[LEVY_DOMAIN, s as u64, 0], substeps, h);
        let dy = brownian_steps(seed, &[LEVY_DOMAIN, s as u64, 1], substeps, h);
        let errs = oracle.sample(&dx, &dy, rs);

        // Two adjacent segments of the same shared paths, integrated whole
        // and in halves.
        let ex = brownian_steps(seed, &[CHEN_DOMAIN, s as u64, 0], substeps, h);
        let ey = brownian_steps(seed, &[CHEN_DOMAIN, s as u64, 1], substeps, h);
        let whole = midpoint_integral(&[dx.as_slice(), &ex].concat(), &[dy.as_slice(), &ey].concat());
        let chen = levy_area_chen(
            midpoint_integral(&dx, &dy),
            midpoint_integral(&ex, &ey),
            dx.iter().sum(),
            ey.iter().sum(),
        );

        let w: f64 = dx.iter().sum();
        let diag = levy_area_exact_diagonal(w, delta) - (midpoint_integral(&dx, &dx) - 0.5 * delta);
        (errs, (chen - whole).abs(), diag * diag)
    });
    let mut sums = vec![CompensatedSum::default(); rs.len()];
    let mut chen_residual: f64 = 0.0;
    let mut diag = CompensatedSum::default();
    for (errs, c, d) in &per_sample {
        for (acc, e) in sums.iter_mut().zip(errs) {
            acc.add(*e);
        }
        chen_residual = chen_residual.max(*c);
        diag.add(*d);
    }
    Ok(LevyValidation {
        delta,
        substeps,
        samples,
        mse: rs
            .iter()
            .zip(&sums)
            .map(|(&r, s)| (r, s.value() / samples as f64))
            .collect(),
        chen_residual,
        diagonal_mse: diag.value() / samples as f64,
    })
}
