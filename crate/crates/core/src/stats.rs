//! Small numerical helpers: streaming moments, compensated sums and slope fits.

use crate::math;

/// Welford's streaming mean/variance accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            math::sqrt(self.variance() / self.n as f64)
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Neumaier-compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    for &x in xs {
        s.add(x);
    }
    s.value()
}

/// Compensated mean of a slice (0 for an empty slice).
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        compensated_sum(xs) / xs.len() as f64
    }
}

/// Ordinary least-squares slope of `y` against `x`.
///
/// Returns NaN when fewer than two points are given or all `x` coincide.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = mean(&x[..n]);
    let my = mean(&y[..n]);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Slope of `log2(values)` against level index.
pub fn log2_slope(levels: &[usize], values: &[f64]) -> f64 {
    let mut xs = alloc::vec::Vec::with_capacity(levels.len());
    let mut ys = alloc::vec::Vec::with_capacity(levels.len());
    for (&l, &v) in levels.iter().zip(values) {
        xs.push(l as f64);
        ys.push(math::log2(v));
    }
    ols_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_textbook_variance() {
        let w: Welford = [1.0, 3.0].into_iter().collect();
        assert_eq!(w.mean(), 2.0);
        assert_eq!(w.variance(), 2.0);
    }

    #[test]
    fn welford_constant_samples_have_zero_variance() {
        let w: Welford = core::iter::repeat(0.7).take(50).collect();
        assert_eq!(w.variance(), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = alloc::vec![1.0e16];
        xs.extend(core::iter::repeat(1.0).take(1000));
        xs.push(-1.0e16);
        assert_eq!(compensated_sum(&xs), 1000.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let levels = [2, 3, 4, 5];
        let vals: alloc::vec::Vec<f64> = levels.iter().map(|&l| math::exp2(-(l as f64))).collect();
        assert!((log2_slope(&levels, &vals) + 1.0).abs() < 1e-12);
    }
}
