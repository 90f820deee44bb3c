use mkvmlmc_core::brownian::{
    antithetic_view, levy_area_chen, levy_area_exact_diagonal, levy_area_fourier, sample_lattice,
    series_tail_variance, tail_inv_squares, BridgeCoefficients, BrownianLattice, Increments, LevyAreaSource,
    LevyMode, SegmentId,
};
use mkvmlmc_core::{Error, Sequential, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn seg(particle: usize, step: isize) -> SegmentId {
    SegmentId {
        particle,
        resolution: 1,
        step,
    }
}

#[test]
fn lattice_is_deterministic() {
    let g = TimeGrid::new(1.0, 0.25, 4, 0).unwrap();
    let a = sample_lattice(1, 2, &g).unwrap();
    let b = sample_lattice(1, 2, &g).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_lattice(2, 2, &g).unwrap());
}

#[test]
fn particle_paths_do_not_depend_on_n() {
    let g = TimeGrid::new(1.0, 0.25, 16, 0).unwrap();
    let a = sample_lattice(5, 3, &g).unwrap();
    let b = sample_lattice(5, 7, &g).unwrap();
    for i in 0..3 {
        assert_eq!(a.path(i), b.path(i));
    }
}

#[test]
fn aggregation_identity() {
    let g = TimeGrid::new(1.0, 0.25, 4, 0).unwrap();
    let l = sample_lattice(1, 2, &g).unwrap();
    for i in 0..2 {
        let p = l.path(i);
        let direct = ((p[0] + p[1]) + p[2]) + p[3];
        assert_eq!(l.increment(i, 0, 4), direct);
        assert_eq!(l.increment(i, 2, 2), 0.0);
        assert_eq!(l.increment(i, -3, 0), 0.0);
        assert_eq!(l.fine(i, -1), 0.0);
    }
}

#[test]
fn increment_second_moment() {
    let g = TimeGrid::new(1.0, 0.125, 1000, 0).unwrap();
    let l = sample_lattice(11, 100, &g).unwrap();
    let delta = g.mesh();
    let mut s = 0.0;
    for i in 0..100 {
        for m in 0..1000 {
            let x = l.fine(i, m);
            s += x * x / delta;
        }
    }
    let m = s / 1e5;
    assert!((0.99..=1.01).contains(&m), "{m}");
}

#[test]
fn exact_diagonal_examples() {
    assert_eq!(levy_area_exact_diagonal(0.0, 0.1), -0.05);
    assert_eq!(levy_area_exact_diagonal(1.0, 1.0), 0.0);
    assert!((levy_area_exact_diagonal(0.3, 0.25) + 0.08).abs() < 1e-15);
}

#[test]
fn fourier_with_vanishing_series() {
    let a = BridgeCoefficients::zero(seg(0, 0), 5, 0.5);
    let b = BridgeCoefficients::zero(seg(1, 0), 5, 0.5);
    let tail = series_tail_variance(0.5, 5).sqrt();
    let v = levy_area_fourier(&a, 0.7, &b, -0.3, 5, 0.0).unwrap();
    assert_eq!(v, 0.5 * 0.7 * -0.3);
    let with_tail = levy_area_fourier(&a, 0.7, &b, -0.3, 5, 1.0).unwrap();
    assert!((with_tail - v - tail).abs() < 1e-15);
}

#[test]
fn fourier_single_series_term() {
    let (alpha, beta) = (0.3, -0.8);
    let mut first = BridgeCoefficients::zero(seg(0, 3), 4, 1.0);
    let mut second = BridgeCoefficients::zero(seg(0, 5), 4, 1.0);
    first.a[0] = alpha;
    second.b[0] = beta;
    let v = levy_area_fourier(&first, 0.0, &second, 0.0, 4, 0.0).unwrap();
    assert!((v - std::f64::consts::PI * alpha * beta).abs() < 1e-15);
}

#[test]
fn fourier_preconditions() {
    let a = BridgeCoefficients::zero(seg(0, 0), 3, 1.0);
    let b = BridgeCoefficients::zero(seg(1, 0), 3, 0.5);
    assert!(matches!(levy_area_fourier(&a, 0.0, &a, 0.0, 3, 0.0), Err(Error::LevyPrecondition(_))));
    assert!(matches!(levy_area_fourier(&a, 0.0, &b, 0.0, 3, 0.0), Err(Error::LevyPrecondition(_))));
    let c = BridgeCoefficients::zero(seg(1, 0), 3, 1.0);
    assert!(levy_area_fourier(&a, 0.0, &c, 0.0, 4, 0.0).is_err());
}

#[test]
fn bridge_coefficients_are_keyed_and_nested() {
    let s = seg(4, 9);
    let a = BridgeCoefficients::sample(77, s, 10, 0.25);
    let b = BridgeCoefficients::sample(77, s, 10, 0.25);
    let c = BridgeCoefficients::sample(77, s, 20, 0.25);
    assert_eq!(a, b);
    assert_eq!(a.a[..], c.a[..10]);
    assert_eq!(a.b[..], c.b[..10]);
    assert_ne!(a, BridgeCoefficients::sample(77, seg(4, 10), 10, 0.25));
}

#[test]
fn bridge_coefficient_variances() {
    let delta = 0.5;
    let r = 3;
    let k = 40_000;
    let mut s = vec![0.0; r];
    let mut a0 = 0.0;
    for q in 0..k {
        let c = BridgeCoefficients::sample(3, seg(0, q), r, delta);
        for n in 0..r {
            s[n] += c.a[n] * c.a[n] + c.b[n] * c.b[n];
        }
        a0 += c.a0 * c.a0;
    }
    let pi2 = std::f64::consts::PI.powi(2);
    for n in 0..r {
        let expect = delta / (2.0 * pi2 * ((n + 1) as f64).powi(2));
        let got = s[n] / (2.0 * k as f64);
        assert!((got / expect - 1.0).abs() < 0.03, "n={n}: {got} vs {expect}");
    }
    // a0 = -2 Σ a_n + tail has the full zero-mode variance 2δ/π² Σ n⁻² = δ/3.
    let got = a0 / k as f64;
    assert!((got / (delta / 3.0) - 1.0).abs() < 0.03, "{got}");
}

#[test]
fn tail_sum_matches_direct_sum() {
    for r in [0usize, 1, 5, 50, 400] {
        let direct: f64 = ((r + 1)..2_000_000).map(|n| 1.0 / (n as f64 * n as f64)).sum::<f64>()
            + 1.0 / 2_000_000.0;
        assert!((tail_inv_squares(r) - direct).abs() < 1e-10, "r={r}");
    }
}

#[test]
fn fourier_statistics_against_riemann_oracle_variance() {
    let delta = 1.0;
    let r = 50;
    let k = 100_000;
    let mut g = ChaCha8Rng::seed_from_u64(2024);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for q in 0..k {
        let inner = BridgeCoefficients::sample(19, seg(0, q), r, delta);
        let outer = BridgeCoefficients::sample(19, seg(1, q), r, delta);
        let dx: f64 = g.sample::<f64, _>(StandardNormal) * delta.sqrt();
        let dy: f64 = g.sample::<f64, _>(StandardNormal) * delta.sqrt();
        let z: f64 = g.sample(StandardNormal);
        let v = levy_area_fourier(&inner, dx, &outer, dy, r, z).unwrap();
        sum += v;
        sq += v * v;
    }
    let mean = sum / k as f64;
    let var = (sq - k as f64 * mean * mean) / (k as f64 - 1.0);
    // Σ_{j<l} ΔX_j ΔY_l over 2¹² sub-steps has variance δ²(1 − 2⁻¹²)/2.
    let oracle = delta * delta * (1.0 - 1.0 / 4096.0) / 2.0;
    assert!(mean.abs() <= 0.02, "{mean}");
    assert!((var / oracle - 1.0).abs() <= 0.05, "{var} vs {oracle}");
}

#[test]
fn chen_examples() {
    assert_eq!(levy_area_chen(0.0, 0.0, 0.0, 0.0), 0.0);
    assert!((levy_area_chen(0.1, -0.2, 0.5, 0.4) - 0.1).abs() < 1e-15);
}

/// `Σ_{j<l} dx_j dy_l` over sub-steps `lo..hi`.
fn riemann(dx: &[f64], dy: &[f64], lo: usize, hi: usize) -> f64 {
    let mut acc = 0.0;
    let mut s = 0.0;
    for m in lo..hi {
        s += acc * dy[m];
        acc += dx[m];
    }
    s
}

#[test]
fn chen_aggregation_on_shared_path() {
    let sub = 256;
    let fine = 4;
    let mut g = ChaCha8Rng::seed_from_u64(7);
    let h = 1.0 / (sub * fine) as f64;
    let dx: Vec<f64> = (0..sub * fine).map(|_| g.sample::<f64, _>(StandardNormal) * h.sqrt()).collect();
    let dy: Vec<f64> = (0..sub * fine).map(|_| g.sample::<f64, _>(StandardNormal) * h.sqrt()).collect();
    let coarse = riemann(&dx, &dy, 0, sub * fine);
    let mut folded = 0.0;
    let mut x_acc = 0.0;
    for q in 0..fine {
        let (lo, hi) = (q * sub, (q + 1) * sub);
        let piece = riemann(&dx, &dy, lo, hi);
        let dy_q: f64 = dy[lo..hi].iter().sum();
        folded = levy_area_chen(folded, piece, x_acc, dy_q);
        x_acc += dx[lo..hi].iter().sum::<f64>();
    }
    assert!((folded - coarse).abs() <= 1e-12 * coarse.abs().max(1.0), "{folded} vs {coarse}");
}

#[test]
fn antithetic_view_swaps_half_steps() {
    let g = [0.1, -0.4, 0.25, 0.9];
    let l = BrownianLattice::from_increments(0, 0.25, &[g.to_vec()]).unwrap();
    let v = antithetic_view(&l, 2, 2).unwrap();
    let swapped: Vec<f64> = (0..4).map(|m| v.fine(0, m)).collect();
    assert_eq!(swapped, [g[1], g[0], g[3], g[2]]);
    let vv = antithetic_view(&v, 2, 2).unwrap();
    let back: Vec<f64> = (0..4).map(|m| vv.fine(0, m)).collect();
    assert_eq!(back, g);
    assert_eq!(v.increment(0, 0, 2), g[1] + g[0]);
    assert_eq!(v.increment(0, 2, 4), g[3] + g[2]);
    assert_eq!(v.fine(0, -1), 0.0);
}

#[test]
fn coarse_aggregation_agrees_on_both_views() {
    let grid = TimeGrid::new(1.0, 0.25, 16, 0).unwrap();
    let l = sample_lattice(3, 4, &grid).unwrap();
    let v = antithetic_view(&l, 2, 4).unwrap();
    for i in 0..4 {
        for n in 0..8isize {
            let a = l.increment(i, 2 * n, 2 * n + 2);
            let b = v.increment(i, 2 * n, 2 * n + 2);
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }
}

#[test]
fn antithetic_view_rejects_misalignment() {
    let grid = TimeGrid::new(1.0, 0.25, 8, 0).unwrap();
    let l = sample_lattice(3, 1, &grid).unwrap();
    assert!(matches!(antithetic_view(&l, 2, 3), Err(Error::Config(_))));
    assert!(antithetic_view(&l, 4, 2).is_err());
}

#[test]
fn zero_and_exact_modes() {
    let grid = TimeGrid::new(1.0, 0.25, 8, 0).unwrap();
    let l = sample_lattice(5, 2, &grid).unwrap();
    let exec = Sequential;
    let exact = LevyAreaSource::new(&exec, &l, LevyMode::ExactDiagonal, &[0, 2]).unwrap();
    let dw = l.increment(1, 4, 6);
    assert_eq!(exact.diagonal(1, 2, 2), levy_area_exact_diagonal(dw, 0.25));
    assert!(matches!(exact.own_delayed(1, 2, 2, 2), Err(Error::LevyPrecondition(_))));

    let zero = LevyAreaSource::new(&exec, &l, LevyMode::ZeroOffDiagonal, &[0, 2]).unwrap();
    let dx = l.increment(1, 2, 4);
    assert_eq!(zero.own_delayed(1, 2, 2, 2).unwrap(), 0.5 * dx * dw);
    assert_eq!(zero.own_delayed(1, 0, 2, 2).unwrap(), 0.0);
    let cache = zero.prepare_cross(2, 2, 2).unwrap();
    assert_eq!(zero.cross(&cache, 0, 1).unwrap(), 0.5 * l.increment(0, 2, 4) * dw);
}

#[test]
fn fourier_source_respects_chen_across_resolutions() {
    let grid = TimeGrid::new(1.0, 0.25, 16, 0).unwrap();
    let l = sample_lattice(8, 3, &grid).unwrap();
    let exec = Sequential;
    let src = LevyAreaSource::new(&exec, &l, LevyMode::Fourier { r: 6 }, &[0, 4]).unwrap();
    for i in 0..3 {
        for n in 2..8 {
            let coarse = src.own_delayed(i, n, 2, 4).unwrap();
            let left = src.own_delayed(i, 2 * n, 1, 4).unwrap();
            let right = src.own_delayed(i, 2 * n + 1, 1, 4).unwrap();
            let m = 2 * n as isize;
            let chained = levy_area_chen(left, right, l.fine(i, m - 4), l.fine(i, m + 1));
            assert!((coarse - chained).abs() <= 1e-14, "{coarse} vs {chained}");
        }
        // Nothing delayed exists before time 0.
        assert_eq!(src.own_delayed(i, 1, 2, 4).unwrap(), 0.0);
    }
    let c1 = src.prepare_cross(5, 2, 4).unwrap();
    let c2 = src.prepare_cross(5, 2, 4).unwrap();
    assert_eq!(src.cross(&c1, 0, 2).unwrap(), src.cross(&c2, 0, 2).unwrap());
}
