mod common;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use biphoton_comb::fit::{
    self, array_to_params, fit_curve, initial_guess, initial_guess_curve, objective, objective_gradient,
    params_to_array, FitError, FitParam,
};
use biphoton_comb::histogram::TimeRange;
use biphoton_comb::sim::simulate;
use biphoton_comb::units::{mhz_to_angular, ps_to_s};
use biphoton_comb::{CombFitParams, FitOptions, Histogram, Loss, PairModel};

use common::*;

fn reference_histogram(seed: u64) -> Histogram {
    simulate(&PairModel::Comb(reference()), &reference_config(200_000, seed)).unwrap()
}

fn assert_recovers(p: &CombFitParams) {
    let t = reference();
    assert!(rel(p.bandwidth, t.bandwidth) < 0.05, "bandwidth {}", p.bandwidth);
    assert!(rel(p.tau_opo, t.tau_opo) < 0.005, "tau_opo {}", p.tau_opo);
    assert!(rel(p.tau_d, t.tau_d) < 0.10, "tau_d {}", p.tau_d);
    assert!((p.tau0 - t.tau0).abs() < ps_to_s(BIN_PS), "tau0 {}", p.tau0);
}

#[test]
fn recovers_reference_parameters_from_simulation() {
    let r = fit::fit(&reference_histogram(2024), &FitOptions::default(), None).unwrap();
    assert!(r.converged);
    assert_recovers(&r.params);
    assert!(r.objective <= r.initial_objective);
    assert!(r.stderr.iter().all(|e| e.is_some_and(|v| v.is_finite() && v > 0.0)));
}

#[test]
fn frozen_background_gives_the_same_recovery() {
    let hist = reference_histogram(2024);
    let free = fit::fit(&hist, &FitOptions::default(), None).unwrap();
    let guess = CombFitParams {
        c2: 0.0,
        ..initial_guess(&hist).unwrap()
    };
    let opts = FitOptions {
        frozen: vec![FitParam::C2],
        ..FitOptions::default()
    };
    let frozen = fit::fit(&hist, &opts, Some(guess)).unwrap();
    assert_eq!(frozen.params.c2, 0.0);
    assert!(frozen.stderr[FitParam::C2.index()].is_none());
    assert_recovers(&frozen.params);
    assert!(rel(frozen.params.bandwidth, free.params.bandwidth) < 0.02);
}

#[test]
fn objective_trace_is_monotone() {
    let r = fit::fit(&reference_histogram(5), &FitOptions::default(), None).unwrap();
    assert_eq!(r.trace.len(), r.iterations + 1);
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.trace);
    assert_eq!(*r.trace.last().unwrap(), r.objective);
}

#[test]
fn noiseless_fit_from_truth_is_a_fixed_point() {
    let truth = reference();
    let data = noiseless(&truth, 0.0, 1.0);
    for loss in [Loss::PoissonWeighted, Loss::LeastSquares] {
        let opts = FitOptions {
            loss,
            ..FitOptions::default()
        };
        let r = fit_curve(&data, &opts, truth).unwrap();
        assert!(r.converged && r.iterations <= 2, "{loss:?}: {}", r.iterations);
        assert!(r.objective < 1e-12);
    }
}

#[test]
fn noiseless_fit_from_guess_reaches_truth() {
    let truth = CombFitParams { c2: 0.01, ..reference() };
    let data = noiseless(&truth, 0.0, 1.0);
    let r = fit_curve(&data, &FitOptions::default(), initial_guess_curve(&data).unwrap()).unwrap();
    assert!(r.converged);
    let (a, b) = (params_to_array(&r.params), params_to_array(&truth));
    for k in 0..6 {
        assert!(rel(a[k], b[k]) < 1e-6, "{}: {} vs {}", FitParam::ALL[k].name(), a[k], b[k]);
    }
}

#[test]
fn covariances_under_least_squares() {
    let truth = reference();
    let opts = FitOptions {
        loss: Loss::LeastSquares,
        ..FitOptions::default()
    };
    let run = |origin: f64, scale: f64| {
        let p = CombFitParams {
            tau0: truth.tau0 + ps_to_s(origin),
            ..truth
        };
        let data = noiseless(&p, origin, scale);
        fit_curve(&data, &opts, initial_guess_curve(&data).unwrap()).unwrap().params
    };
    let base = run(0.0, 1.0);
    let moved = run(-3_000.5, 1.0);
    let scaled = run(0.0, 0.25);
    assert!(rel(moved.tau0 + ps_to_s(3_000.5), base.tau0) < 1e-6);
    assert!(rel(moved.bandwidth, base.bandwidth) < 1e-6);
    assert!(rel(scaled.c1, 0.25 * base.c1) < 1e-6);
    assert!(rel(scaled.tau_d, base.tau_d) < 1e-6);
}

#[test]
fn gradient_matches_finite_differences_at_random_points() {
    let data = noiseless(&CombFitParams { c2: 0.02, ..reference() }, 0.0, 1.0);
    let mut rng = StdRng::seed_from_u64(99);
    let scales = [1.0, 1.0, mhz_to_angular(1.0), 1e-9, 1e-9, 1e-10];
    for _ in 0..10 {
        let p = CombFitParams {
            c1: rng.random_range(60.0..120.0),
            c2: rng.random_range(0.0..0.05),
            bandwidth: mhz_to_angular(rng.random_range(6.0..10.0)),
            tau0: 59e-9 + rng.random_range(-50e-12..50e-12),
            tau_opo: 1.63e-9 * rng.random_range(0.998..1.002),
            tau_d: rng.random_range(180e-12..260e-12),
            n_sum: 200,
        };
        for loss in [Loss::PoissonWeighted, Loss::LeastSquares] {
            let opts = FitOptions {
                loss,
                ..FitOptions::default()
            };
            let g = objective_gradient(&p, &data, &opts).unwrap();
            let x = params_to_array(&p);
            for k in 0..6 {
                let h = 1e-6 * scales[k];
                let (mut hi, mut lo) = (x, x);
                hi[k] += h;
                lo[k] -= h;
                let fd = (objective(&array_to_params(&hi, 200), &data, &opts).unwrap()
                    - objective(&array_to_params(&lo, 200), &data, &opts).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-12),
                    "{loss:?} {}: {fd} vs {}",
                    FitParam::ALL[k].name(),
                    g[k]
                );
            }
        }
    }
}

#[test]
fn result_respects_bounds() {
    let hist = reference_histogram(12);
    let mut opts = FitOptions::default();
    let data = fit::CurveData::from_histogram(&hist, &[]);
    let guess = initial_guess_curve(&data).unwrap();
    let mut bounds = [(f64::NEG_INFINITY, f64::INFINITY); 6];
    bounds[0] = (1e-9, 1e9);
    bounds[1] = (0.0, 1.0);
    bounds[2] = (mhz_to_angular(8.5), mhz_to_angular(9.0));
    bounds[3] = (50e-9, 70e-9);
    bounds[4] = (1.5e-9, 1.7e-9);
    bounds[5] = (100e-12, 400e-12);
    opts.bounds = Some(bounds);
    let r = fit::fit(&hist, &opts, Some(guess)).unwrap();
    let x = params_to_array(&r.params);
    for k in 0..6 {
        assert!(x[k] >= bounds[k].0 && x[k] <= bounds[k].1, "{k}: {}", x[k]);
    }
    assert_eq!(r.params.bandwidth, mhz_to_angular(8.5));
}

#[test]
fn iteration_limit_flags_non_convergence() {
    let hist = reference_histogram(13);
    let start = CombFitParams {
        bandwidth: mhz_to_angular(12.0),
        tau_d: 300e-12,
        ..initial_guess(&hist).unwrap()
    };
    let opts = FitOptions {
        max_iter: 1,
        ..FitOptions::default()
    };
    let r = fit::fit(&hist, &opts, Some(start)).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 1);
    assert!(r.objective < r.initial_objective);
}

#[test]
fn fits_are_deterministic() {
    let hist = reference_histogram(14);
    let a = fit::fit(&hist, &FitOptions::default(), None).unwrap();
    let b = fit::fit(&hist, &FitOptions::default(), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn masking_everything_is_rejected() {
    let hist = reference_histogram(15);
    let opts = FitOptions {
        mask: vec![TimeRange::new(-1.0, 1e6).unwrap()],
        ..FitOptions::default()
    };
    assert_eq!(
        objective(&reference(), &fit::CurveData::from_histogram(&hist, &opts.mask), &opts),
        Err(FitError::AllMasked)
    );
    assert!(fit::fit(&hist, &opts, Some(reference())).is_err());
}

#[test]
fn guess_needs_periodicity() {
    let flat = Histogram::new(BIN_PS, 0.0, vec![12; 5000]).unwrap();
    match initial_guess(&flat) {
        Err(FitError::NoPeriodicity(d)) => assert_eq!(d.visible_bins, 5000),
        other => panic!("{other:?}"),
    }
}
