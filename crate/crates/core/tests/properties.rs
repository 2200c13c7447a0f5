use std::f64::consts::PI;

use proptest::prelude::*;

use biphoton_comb::etalon::{airy_transmission, filtered_comb, mode_weights, ModeWeights};
use biphoton_comb::io::{format_histogram, parse_histogram};
use biphoton_comb::model::{comb_term, dirichlet_comb, gain_functions, gamma2_analytic, gamma2_comb_fit, jitter_pdf};
use biphoton_comb::units::mhz_to_angular;
use biphoton_comb::{CavityParams, CombFitParams, EtalonSpec, Histogram, TimeRange};

fn cavity_strategy() -> impl Strategy<Value = CavityParams> {
    (1.0..50.0f64, 0.2e9..2e9f64, 0u32..300, 0.0..0.2f64).prop_map(|(bw, fsr, n, eps)| {
        let bandwidth = mhz_to_angular(bw);
        CavityParams::lossless(bandwidth, 2.0 * PI * fsr, n, eps * bandwidth)
    })
}

fn comb_strategy() -> impl Strategy<Value = CombFitParams> {
    (10.0..200.0f64, 0.0..0.1f64, 2.0..20.0f64, 1.0e-9..3.0e-9f64, 50e-12..400e-12f64).prop_map(
        |(c1, c2, bw, tau_opo, tau_d)| {
            let bandwidth = mhz_to_angular(bw);
            CombFitParams {
                c1,
                c2,
                bandwidth,
                tau0: 0.0,
                tau_opo,
                tau_d,
                n_sum: CombFitParams::min_n_sum(bandwidth, tau_opo),
            }
        },
    )
}

fn weights_strategy() -> impl Strategy<Value = ModeWeights> {
    (0usize..40).prop_flat_map(|n| {
        prop::collection::vec(0.0..=1.0f64, 2 * n + 1).prop_map(|w| ModeWeights::new(w).unwrap())
    })
}

proptest! {
    #[test]
    fn correlation_is_even_in_delay(c in cavity_strategy(), tau in 0.0..20e-9f64) {
        let a = gamma2_analytic(&c, tau);
        let b = gamma2_analytic(&c, -tau);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn dirichlet_is_bounded_and_pi_periodic(theta in -10.0..10.0f64, n in 0u32..500, k in -5i32..5) {
        let d = dirichlet_comb(theta, n);
        let top = (2.0 * n as f64 + 1.0).powi(2);
        prop_assert!(d >= 0.0 && d <= top * (1.0 + 1e-12));
        let shifted = dirichlet_comb(theta + k as f64 * PI, n);
        prop_assert!((d - shifted).abs() <= 1e-9 * top);
    }

    #[test]
    fn comb_peaks_at_multiples_of_round_trip(c in cavity_strategy(), n in -5i64..5) {
        let t = n as f64 * c.round_trip_time();
        let expected = (-c.bandwidth * t.abs()).exp() * (2.0 * c.n_modes as f64 + 1.0).powi(2);
        prop_assert!((comb_term(&c, t) - expected).abs() <= 1e-6 * expected);
    }

    #[test]
    fn filtered_comb_is_non_negative(w in weights_strategy(), tau in -30e-9..30e-9f64) {
        prop_assert!(filtered_comb(&w, mhz_to_angular(7.8), 2.0 * PI * 0.625e9, tau) >= 0.0);
    }

    #[test]
    fn scaling_weights_scales_filtered_comb_quadratically(
        w in weights_strategy(),
        c in 0.01..=1.0f64,
        tau in -30e-9..30e-9f64,
    ) {
        let (bw, fsr) = (mhz_to_angular(7.8), 2.0 * PI * 0.625e9);
        let base = filtered_comb(&w, bw, fsr, tau);
        let scaled = filtered_comb(&w.scaled(c).unwrap(), bw, fsr, tau);
        let top = w.as_slice().iter().sum::<f64>().powi(2);
        prop_assert!((scaled - c * c * base).abs() <= 1e-12 * top.max(1.0));
    }

    #[test]
    fn uniform_weights_reduce_to_comb_term(c in cavity_strategy(), tau in -30e-9..30e-9f64) {
        let f = filtered_comb(&ModeWeights::uniform(c.n_modes), c.bandwidth, c.fsr, tau);
        let d = comb_term(&c, tau);
        prop_assert!((f - d).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn lossless_gains_are_unitary_at_zero_pump(
        g1 in 1e5..1e9f64,
        g2 in 0.0..1e9f64,
        omega in -1e10..1e10f64,
    ) {
        let c = CavityParams {
            gamma1: g1,
            gamma2: g2,
            epsilon: 0.0,
            bandwidth: g1 + g2,
            fsr: 1e12,
            n_modes: 0,
            finesse_ratio: 1.0,
        };
        let g = gain_functions(&c, omega).unwrap();
        prop_assert!((g.direct_in.norm_sqr() + g.direct_loss.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert_eq!(g.conjugate_in.norm(), 0.0);
    }

    #[test]
    fn jitter_density_is_even_and_peaked(t in 0.0..2e-9f64, tau_d in 10e-12..1e-9f64) {
        let a = jitter_pdf(t, tau_d).unwrap();
        prop_assert_eq!(a, jitter_pdf(-t, tau_d).unwrap());
        prop_assert!(a <= jitter_pdf(0.0, tau_d).unwrap());
    }

    #[test]
    fn fit_model_sits_above_pedestal(p in comb_strategy(), tau in -30e-9..30e-9f64) {
        let v = gamma2_comb_fit(&p, tau);
        prop_assert!(v >= p.c1 * p.c2);
        prop_assert!((v - gamma2_comb_fit(&p, -tau)).abs() <= 1e-9 * v);
    }

    #[test]
    fn airy_is_periodic_and_bounded(delta in -50e9..50e9f64, k in -3i32..3, detuning in -5e9..5e9f64) {
        let spec = EtalonSpec { fsr: 13e9, fwhm: 1e9, detuning };
        let t = airy_transmission(&spec, delta);
        prop_assert!(t > 0.0 && t <= 1.0);
        let shifted = airy_transmission(&spec, delta + k as f64 * spec.fsr);
        prop_assert!((t - shifted).abs() < 1e-9);
    }

    #[test]
    fn mode_weights_are_symmetric_without_detuning(n in 0u32..300, fsr_opo in 0.1e9..2e9f64) {
        let spec = EtalonSpec { fsr: 13e9, fwhm: 1e9, detuning: 0.0 };
        let w = mode_weights(&spec, fsr_opo, n).unwrap();
        prop_assert_eq!(w.get(0), 1.0);
        for m in 1..=n as i64 {
            prop_assert!((w.get(m) - w.get(-m)).abs() < 1e-15);
        }
    }

    #[test]
    fn histogram_text_round_trips(
        counts in prop::collection::vec(0u64..1_000_000, 1..200),
        bin_width in 0.5..100.0f64,
        origin in -1e6..1e6f64,
        seed in proptest::option::of(any::<u64>()),
        dead in proptest::option::of(1.0..1000.0f64),
    ) {
        let mut h = Histogram::new(bin_width, origin, counts).unwrap();
        if let Some(d) = dead {
            h = h.with_mask(vec![TimeRange::new(origin, origin + d).unwrap()]);
        }
        h.acquisition.seed = seed;
        let text = format_histogram(&h);
        let back = parse_histogram(&text).unwrap();
        prop_assert_eq!(format_histogram(&back), text);
        prop_assert_eq!(back, h);
    }
}
