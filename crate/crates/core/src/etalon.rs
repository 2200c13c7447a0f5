//! Fabry-Pérot etalon filtering of the OPO mode comb.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EtalonError {
    #[error("etalon requires fsr > fwhm > 0 (fsr = {fsr} Hz, fwhm = {fwhm} Hz)")]
    InvalidSpec { fsr: f64, fwhm: f64 },
    #[error("mode weights must have odd length 2N+1, got {0}")]
    EvenLength(usize),
    #[error("mode weight {value} at m = {m} is outside [0, 1]")]
    WeightOutOfRange { m: i64, value: f64 },
    #[error("OPO free spectral range must be positive, got {0} Hz")]
    InvalidOpoFsr(f64),
}

/// A lossless symmetric etalon. Frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtalonSpec {
    pub fsr: f64,
    pub fwhm: f64,
    /// Offset of the transmission peak from the degenerate frequency.
    pub detuning: f64,
}

impl EtalonSpec {
    pub fn validate(&self) -> Result<(), EtalonError> {
        let ok = self.fsr.is_finite() && self.fwhm.is_finite() && self.detuning.is_finite();
        if ok && self.fwhm > 0.0 && self.fsr > self.fwhm {
            Ok(())
        } else {
            Err(EtalonError::InvalidSpec {
                fsr: self.fsr,
                fwhm: self.fwhm,
            })
        }
    }

    pub fn finesse(&self) -> f64 {
        self.fsr / self.fwhm
    }
}

/// Airy transmission 1/(1 + (2F/π)²·sin²(πδ/FSR)) at offset `delta` (Hz) from
/// a transmission peak.
pub fn airy_transmission(spec: &EtalonSpec, delta: f64) -> f64 {
    let coeff = 2.0 * spec.finesse() / PI;
    let s = (PI * delta / spec.fsr).sin();
    1.0 / (1.0 + coeff * coeff * s * s)
}

/// Amplitude weights of the OPO modes m = -N..=N.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeWeights {
    weights: Vec<f64>,
}

impl ModeWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, EtalonError> {
        if weights.len().is_multiple_of(2) {
            return Err(EtalonError::EvenLength(weights.len()));
        }
        let n = (weights.len() / 2) as i64;
        for (i, &w) in weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(EtalonError::WeightOutOfRange {
                    m: i as i64 - n,
                    value: w,
                });
            }
        }
        Ok(Self { weights })
    }

    /// All 2N+1 modes with unit weight.
    pub fn uniform(n_modes: u32) -> Self {
        Self {
            weights: vec![1.0; 2 * n_modes as usize + 1],
        }
    }

    /// N, so that the weights cover m = -N..=N.
    pub fn n_modes(&self) -> u32 {
        (self.weights.len() / 2) as u32
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of mode `m`, zero outside the covered range.
    pub fn get(&self, m: i64) -> f64 {
        let idx = m + i64::from(self.n_modes());
        if idx < 0 {
            return 0.0;
        }
        self.weights.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// (m, w_m) pairs in increasing m.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let n = i64::from(self.n_modes());
        self.weights.iter().enumerate().map(move |(i, &w)| (i as i64 - n, w))
    }

    /// Fraction of modes whose weight exceeds `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let kept = self.weights.iter().filter(|&&w| w > threshold).count();
        kept as f64 / self.weights.len() as f64
    }

    pub fn scaled(&self, c: f64) -> Result<Self, EtalonError> {
        Self::new(self.weights.iter().map(|w| w * c).collect())
    }

    /// Autocorrelation aₖ = Σₘ wₘ·wₘ₊ₖ for k = 0..=2N. These are the Fourier
    /// coefficients of |Σₘ wₘ e^{imx}|² = a₀ + 2Σₖ aₖ cos(kx).
    pub fn autocorrelation(&self) -> Vec<f64> {
        let w = &self.weights;
        (0..w.len())
            .map(|k| w.iter().zip(&w[k..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// |Σₘ wₘ e^{imx}|².
    pub fn intensity(&self, x: f64) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, w) in self.iter() {
            if w != 0.0 {
                let (s, c) = (m as f64 * x).sin_cos();
                acc += Complex64::new(w * c, w * s);
            }
        }
        acc.norm_sqr()
    }
}

/// Samples the etalon transmission at the OPO modes ω₀ + m·FSR_opo.
/// `fsr_opo` in Hz.
pub fn mode_weights(spec: &EtalonSpec, fsr_opo: f64, n_modes: u32) -> Result<ModeWeights, EtalonError> {
    spec.validate()?;
    if !(fsr_opo > 0.0 && fsr_opo.is_finite()) {
        return Err(EtalonError::InvalidOpoFsr(fsr_opo));
    }
    let n = i64::from(n_modes);
    let weights = (-n..=n)
        .map(|m| airy_transmission(spec, spec.detuning + m as f64 * fsr_opo))
        .collect();
    Ok(ModeWeights { weights })
}

/// Filtered comb e^{-Δω|τ|}·|Σₘ wₘ e^{imΔΩτ}|², pedestal omitted.
/// `bandwidth` and `fsr_opo` in rad/s, `tau` in seconds.
pub fn filtered_comb(weights: &ModeWeights, bandwidth: f64, fsr_opo: f64, tau: f64) -> f64 {
    (-bandwidth * tau.abs()).exp() * weights.intensity(fsr_opo * tau)
}

/// Shape of the timing-jitter kernel the comb is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterKernel {
    /// One double-exponential of FWHM τ_D, as in `model::jitter_pdf`.
    Single,
    /// Difference of two detectors each with a double-exponential of FWHM
    /// τ_D; gives (1+x)e^{-x} teeth.
    Pair,
}

/// Jitter-averaged filtered comb, evaluated through its Fourier series.
///
/// Each harmonic k of the mode intensity is damped by the kernel's
/// characteristic function, 1/(1+(kΔΩb)²) for a double exponential of
/// scale b = τ_D/(2ln2). The envelope is held fixed across the kernel width,
/// which is accurate to O((Δω·τ_D)²).
#[derive(Debug, Clone)]
pub struct SmoothedComb {
    bandwidth: f64,
    fsr_opo: f64,
    coeffs: Vec<f64>,
}

impl SmoothedComb {
    pub fn new(weights: &ModeWeights, bandwidth: f64, fsr_opo: f64, tau_d: f64, kernel: JitterKernel) -> Self {
        let scale = tau_d / (2.0 * std::f64::consts::LN_2);
        let coeffs = weights
            .autocorrelation()
            .into_iter()
            .enumerate()
            .map(|(k, a)| {
                let q = k as f64 * fsr_opo * scale;
                let damp = 1.0 / (1.0 + q * q);
                let damp = match kernel {
                    JitterKernel::Single => damp,
                    JitterKernel::Pair => damp * damp,
                };
                if k == 0 {
                    a * damp
                } else {
                    2.0 * a * damp
                }
            })
            .collect();
        Self {
            bandwidth,
            fsr_opo,
            coeffs,
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let x = self.fsr_opo * tau;
        let series: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a * (k as f64 * x).cos())
            .sum();
        (-self.bandwidth * tau.abs()).exp() * series
    }
}

/// Comb contrast |C(t) - m| / (C(t) + m) of a curve at `at`, where m is the
/// mean of the curve half a `period` before and after.
pub fn comb_contrast(curve: impl Fn(f64) -> f64, at: f64, period: f64) -> f64 {
    let peak = curve(at);
    let mid = 0.5 * (curve(at - period / 2.0) + curve(at + period / 2.0));
    (peak - mid).abs() / (peak + mid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dirichlet_comb;

    fn reference_etalon() -> EtalonSpec {
        EtalonSpec {
            fsr: 13e9,
            fwhm: 1e9,
            detuning: 0.0,
        }
    }

    #[test]
    fn airy_reference_points() {
        let e = reference_etalon();
        assert_eq!(airy_transmission(&e, 0.0), 1.0);
        let half = airy_transmission(&e, e.fwhm / 2.0);
        assert!((half - 0.5).abs() < 0.01, "{half}");
        // 1/(1+(26/π)²)
        let trough = airy_transmission(&e, e.fsr / 2.0);
        assert!((trough - 0.014389913677115975).abs() < 1e-15, "{trough}");
        assert!((airy_transmission(&e, 0.3e9) - airy_transmission(&e, 0.3e9 + e.fsr)).abs() < 1e-12);
    }

    #[test]
    fn invalid_etalon_rejected() {
        let bad = EtalonSpec {
            fsr: 1e9,
            fwhm: 2e9,
            detuning: 0.0,
        };
        assert!(bad.validate().is_err());
        assert!(mode_weights(&bad, 0.625e9, 3).is_err());
        assert!(mode_weights(&reference_etalon(), 0.0, 3).is_err());
    }

    #[test]
    fn weights_symmetric_and_peaked() {
        let w = mode_weights(&reference_etalon(), 0.625e9, 200).unwrap();
        assert_eq!(w.as_slice().len(), 401);
        assert_eq!(w.get(0), 1.0);
        for m in 1..=200 {
            assert!((w.get(m) - w.get(-m)).abs() < 1e-15);
        }
        assert_eq!(w.get(201), 0.0);
    }

    #[test]
    fn etalon_mode_fraction_below_ten_percent() {
        let w = mode_weights(&reference_etalon(), 0.625e9, 200).unwrap();
        let frac = w.fraction_above(0.5);
        // 35 of 401 modes.
        assert!((frac - 35.0 / 401.0).abs() < 1e-12, "{frac}");
        assert!(frac < 0.1);
    }

    #[test]
    fn weights_validation() {
        assert!(matches!(ModeWeights::new(vec![1.0, 1.0]), Err(EtalonError::EvenLength(2))));
        assert!(ModeWeights::new(vec![0.5, 1.1, 0.0]).is_err());
        assert!(ModeWeights::new(vec![0.5, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn uniform_reduces_to_dirichlet() {
        let w = ModeWeights::uniform(7);
        assert_eq!(filtered_comb(&w, 1e7, 3e9, 0.0), 225.0);
        for i in 0..50 {
            let tau = -1e-9 + i as f64 * 0.0437e-9;
            let a = filtered_comb(&w, 1e7, 3e9, tau);
            let b = (-1e7 * tau.abs()).exp() * dirichlet_comb(3e9 * tau / 2.0, 7);
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn single_mode_has_no_oscillation() {
        let mut v = vec![0.0; 21];
        v[10] = 1.0;
        let w = ModeWeights::new(v).unwrap();
        for i in 0..20 {
            let tau = i as f64 * 0.31e-9;
            let expected = (-4.9e7 * tau).exp();
            assert!((filtered_comb(&w, 4.9e7, 3.9e9, tau) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn smoothed_series_matches_unsmoothed_limit() {
        // Vanishing jitter leaves the bare comb.
        let w = ModeWeights::new(vec![0.2, 0.7, 1.0, 0.7, 0.2]).unwrap();
        let s = SmoothedComb::new(&w, 1e7, 3e9, 1e-18, JitterKernel::Single);
        for i in 0..30 {
            let tau = i as f64 * 0.077e-9;
            let a = s.eval(tau);
            let b = filtered_comb(&w, 1e7, 3e9, tau);
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} {b}");
        }
    }
}
