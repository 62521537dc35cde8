//! Trainability metric and run aggregation.

use prunebench::metrics::{self, AccuracyCurve};
use prunebench::planner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sched(total: usize) -> planner::LRSchedule {
    planner::synthesize_step_schedule(total, 1e-1, 1e-3, 30).unwrap()
}

#[test]
fn constant_curve_yields_its_value() {
    let s = sched(12); // first stage = 6 epochs
    let c = AccuracyCurve::new(vec![37.5; 12], s).unwrap();
    assert_eq!(metrics::trainability_accuracy(&c).unwrap(), 37.5);
}

#[test]
fn mean_of_first_stage_only() {
    // First stage of 3 epochs: T = mean(10, 20, 30) = 20.
    let s = planner::synthesize_step_schedule(6, 1e-1, 1e-3, 3).unwrap();
    assert_eq!(s.first_stage_epochs(), 3);
    let c = AccuracyCurve::new(vec![10.0, 20.0, 30.0, 90.0, 91.0, 92.0], s).unwrap();
    assert_eq!(metrics::trainability_accuracy(&c).unwrap(), 20.0);
}

#[test]
fn tail_does_not_affect_trainability() {
    let s = planner::synthesize_step_schedule(6, 1e-1, 1e-3, 3).unwrap();
    let head = vec![11.0, 22.0, 33.0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut reference = None;
    for _ in 0..50 {
        let mut acc = head.clone();
        acc.extend((0..3).map(|_| rng.gen_range(0.0..100.0)));
        let t = metrics::trainability_accuracy(&AccuracyCurve::new(acc, s.clone()).unwrap())
            .unwrap();
        match reference {
            None => reference = Some(t),
            Some(r) => assert_eq!(t, r, "tail changed T"),
        }
    }
}

#[test]
fn empty_first_stage_is_an_error() {
    // A 0-length curve cannot be built at all; the N = 0 guard triggers on a
    // degenerate schedule instead.
    let s = planner::LRSchedule {
        kind: planner::ScheduleKind::StepDecade,
        stages: Vec::new(),
        total_epochs: 0,
        final_lr: 1e-3,
    };
    let c = AccuracyCurve::new(Vec::new(), s).unwrap();
    assert!(metrics::trainability_accuracy(&c).is_err());
}

#[test]
fn curve_length_must_match_schedule() {
    assert!(AccuracyCurve::new(vec![10.0; 5], sched(12)).is_err());
    assert!(AccuracyCurve::new(vec![150.0; 12], sched(12)).is_err());
}

#[test]
fn single_run_reports_the_n1_caveat() {
    let s = metrics::aggregate(&[79.42]).unwrap();
    assert_eq!(s.mean, 79.42);
    assert_eq!(s.n, 1);
    assert!(s.render().contains("n=1"), "got {}", s.render());
}

#[test]
fn reference_triple_mean_and_std() {
    let s = metrics::aggregate(&[79.42, 79.57, 79.72]).unwrap();
    assert!((s.mean - 79.57).abs() < 1e-9);
    assert!((s.std - 0.15).abs() < 1e-9);
    assert_eq!(s.render(), "79.57±0.15");
}

#[test]
fn aggregate_matches_two_pass_variance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(2..8usize);
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let s = metrics::aggregate(&vals).unwrap();
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let var: f64 =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((s.mean - mean).abs() < 1e-9);
        assert!((s.std - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn aggregate_is_permutation_invariant() {
    let vals = [12.0, 93.5, 47.1, 66.6, 5.25];
    let a = metrics::aggregate(&vals).unwrap();
    let mut rev = vals;
    rev.reverse();
    let b = metrics::aggregate(&rev).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    // std involves a different summation order; allow float slack.
    assert!((a.std - b.std).abs() < 1e-12);
}

#[test]
fn empty_aggregate_is_an_error() {
    assert!(metrics::aggregate(&[]).is_err());
}

#[test]
fn trainability_equals_direct_mean_oracle_on_random_curves() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let total = rng.gen_range(4..40usize);
        let decades = rng.gen_range(1..3usize);
        let init = 1e-1;
        let fin = init * 10f64.powi(-(decades as i32));
        let Ok(s) = planner::synthesize_step_schedule(total, init, fin, 30) else {
            continue;
        };
        let acc: Vec<f64> = (0..total).map(|_| rng.gen_range(0.0..100.0)).collect();
        let n = s.first_stage_epochs();
        let want: f64 = acc[..n].iter().sum::<f64>() / n as f64;
        let got = metrics::trainability_accuracy(&AccuracyCurve::new(acc, s).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}
