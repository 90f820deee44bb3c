use std::sync::Arc;

use mkvmlmc_core::model::MeasureView;
use mkvmlmc_core::particles::{init_ensemble, moment_report, wasserstein2_1d, InitialSegment, PiecewiseLinear};
use mkvmlmc_core::{Error, TimeGrid};
use proptest::prelude::*;

fn grid(tau: f64, horizon: f64, steps: usize) -> TimeGrid {
    TimeGrid::new(horizon, tau, steps, 0).unwrap()
}

#[test]
fn zero_initial_segment() {
    let g = grid(0.125, 1.0, 16);
    let e = init_ensemble(&InitialSegment::Zero, 5, &g, 1).unwrap();
    assert_eq!(e.frontier(), 0);
    for q in -2..=0 {
        assert!(e.node(q).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn linear_initial_segment_is_reproduced() {
    let g = grid(0.5, 1.0, 8);
    let e = init_ensemble(&InitialSegment::Function(Arc::new(|t| t)), 3, &g, 0).unwrap();
    for q in -4..=0 {
        let t = g.time(q);
        assert!(e.node(q).unwrap().iter().all(|&v| v == t));
    }
}

#[test]
fn interpolated_endpoint_samples() {
    // ξ(θ) = θ² known only at θ = -1 and θ = 0.
    let xi = PiecewiseLinear::new(vec![-1.0, 0.0], vec![1.0, 0.0]).unwrap();
    let g = grid(1.0, 1.0, 2);
    let e = init_ensemble(&InitialSegment::Samples(xi), 2, &g, 0).unwrap();
    assert_eq!(e.node(-1).unwrap(), &[0.5, 0.5]);
    assert_eq!(e.node(-2).unwrap(), &[1.0, 1.0]);
}

#[test]
fn per_particle_segments_are_independent_of_n() {
    let g = grid(0.25, 1.0, 8);
    let xi = InitialSegment::PerParticle(Arc::new(|s, t| (s % 1000) as f64 * 1e-3 + t));
    let a = init_ensemble(&xi, 3, &g, 9).unwrap();
    let b = init_ensemble(&xi, 5, &g, 9).unwrap();
    assert_eq!(a.node(-1).unwrap(), &b.node(-1).unwrap()[..3]);
}

#[test]
fn measure_view_examples() {
    let v = MeasureView::from_atoms(&[1.0, 3.0]);
    assert_eq!(v.mean(), 2.0);
    assert_eq!(v.second_moment(), 5.0);
    assert_eq!(MeasureView::from_atoms(&[0.0, 0.0, 0.0]).mean(), 0.0);
    assert_eq!(MeasureView::from_atoms(&[7.0]).mean(), 7.0);
}

#[test]
fn ensemble_measure_view_and_frontier() {
    let g = grid(0.25, 1.0, 4);
    let mut e = init_ensemble(&InitialSegment::Zero, 2, &g, 0).unwrap();
    e.commit(&[1.0, 3.0]).unwrap();
    let v = e.measure_view(1).unwrap();
    assert_eq!((v.mean(), v.second_moment()), (2.0, 5.0));
    assert!(matches!(e.measure_view(2), Err(Error::Sequencing { node: 2, frontier: 1 })));
    assert_eq!(e.node(1).unwrap(), e.node(1).unwrap());
    let err = e.commit(&[f64::NAN, 0.0]).unwrap_err();
    assert!(err.is_numerical());
    assert_eq!(e.frontier(), 1);
}

#[test]
fn wasserstein_examples() {
    assert_eq!(wasserstein2_1d(&[0.5, -2.0, 1.0], &[0.5, -2.0, 1.0]).unwrap(), 0.0);
    assert_eq!(wasserstein2_1d(&[0.0], &[1.0]).unwrap(), 1.0);
    assert_eq!(wasserstein2_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
    assert!(matches!(wasserstein2_1d(&[0.0], &[]), Err(Error::SizeMismatch { .. })));
}

#[test]
fn moment_report_examples() {
    let g = grid(0.25, 0.5, 2);
    let mut e = init_ensemble(&InitialSegment::Zero, 2, &g, 0).unwrap();
    let r = moment_report(&e, 2.0).unwrap();
    assert!(r.rows.iter().all(|row| row.2 == 0.0));
    e.commit(&[-2.0, 2.0]).unwrap();
    let r = moment_report(&e, 2.0).unwrap();
    assert_eq!(r.rows[1].2, 4.0);
    assert_eq!(r.running_max, 4.0);
    assert!(r.all_finite);
    assert!(moment_report(&e, 0.5).is_err());
}

fn sample_set() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 6)
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(a in sample_set(), b in sample_set(), c in sample_set()) {
        let ab = wasserstein2_1d(&a, &b).unwrap();
        let ba = wasserstein2_1d(&b, &a).unwrap();
        let bc = wasserstein2_1d(&b, &c).unwrap();
        let ac = wasserstein2_1d(&a, &c).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
        prop_assert!(ac <= ab + bc + 1e-12);
        if ab == 0.0 {
            let mut x = a.clone();
            let mut y = b.clone();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn wasserstein_is_permutation_invariant(a in sample_set(), b in sample_set(), k in 0usize..6) {
        let mut p = a.clone();
        p.rotate_left(k);
        prop_assert_eq!(wasserstein2_1d(&a, &b).unwrap(), wasserstein2_1d(&p, &b).unwrap());
    }
}
