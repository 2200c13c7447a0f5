#![allow(dead_code)]

use biphoton_comb::fit::CurveData;
use biphoton_comb::histogram::TimeRange;
use biphoton_comb::model::gamma2_comb_fit;
use biphoton_comb::units::{mhz_to_angular, ps_to_s};
use biphoton_comb::{CombFitParams, SimConfig};

pub const BIN_PS: f64 = 4.88;
pub const DEAD_PS: f64 = 45_000.0;
pub const WINDOW_PS: (f64, f64) = (0.0, 125_000.0);

/// Fitted curve reported for the 70 s acquisition.
pub fn reference() -> CombFitParams {
    CombFitParams {
        c1: 93.0,
        c2: 0.0,
        bandwidth: mhz_to_angular(7.8),
        tau0: 59e-9,
        tau_opo: 1.63e-9,
        tau_d: 220e-12,
        n_sum: 200,
    }
}

pub fn reference_config(pairs: u64, seed: u64) -> SimConfig {
    SimConfig {
        pair_count: pairs,
        background_ratio: 0.0,
        window_ps: WINDOW_PS,
        dead_before_ps: DEAD_PS,
        jitter_fwhm_ps: 220.0,
        bin_width_ps: BIN_PS,
        seed,
        duration_s: Some(70.0),
        label: "reference".into(),
    }
}

/// The fit model sampled at bin centres on the reference axis, dead region masked.
pub fn noiseless(p: &CombFitParams, origin_ps: f64, scale: f64) -> CurveData {
    let n = ((WINDOW_PS.1 - WINDOW_PS.0) / BIN_PS).floor() as usize;
    let values = (0..n)
        .map(|i| scale * gamma2_comb_fit(p, ps_to_s(origin_ps + (i as f64 + 0.5) * BIN_PS)))
        .collect();
    let mask = [TimeRange::new(origin_ps, origin_ps + DEAD_PS).unwrap()];
    CurveData::from_values(origin_ps, BIN_PS, values, &mask)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}
