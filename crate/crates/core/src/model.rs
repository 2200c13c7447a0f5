//! Analytic correlation model of a degenerate OPO far below threshold.
//!
//! All quantities are SI: times in seconds, rates and frequencies in rad/s.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use thiserror::Error;

/// Relative envelope weight below which omitted comb teeth are negligible.
pub const TAIL_WEIGHT_LIMIT: f64 = 1e-6;

/// Teeth whose jitter argument exceeds this contribute less than 1e-24 of a
/// tooth height and are skipped during evaluation.
const TOOTH_ARG_CUTOFF: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is out of range: {reason}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("non-finite input `{name}`")]
    NonFinite { name: &'static str },
    #[error(
        "tooth sum truncated too early: n_sum = {n_sum} leaves envelope weight {weight:e} (limit {TAIL_WEIGHT_LIMIT:e})"
    )]
    Truncation { n_sum: u32, weight: f64 },
}

/// Soft warnings raised by parameter validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diagnostic {
    /// |ε| is not small compared to the threshold value (γ₁+γ₂)/4.
    NearThreshold { epsilon: f64, threshold: f64 },
}

fn check(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { name });
    }
    if cond {
        Ok(())
    } else {
        Err(ModelError::OutOfRange { name, value, reason })
    }
}

/// Physical OPO parameters.
///
/// `epsilon` carries the same angular-frequency units as the coupling
/// constants, so that `g₁(0) = 4εγ₁/(γ₁+γ₂)²` is dimensionless and the
/// threshold sits at `ε = (γ₁+γ₂)/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Output-coupler coupling constant γ₁ (rad/s).
    pub gamma1: f64,
    /// Loss-channel coupling constant γ₂ (rad/s).
    pub gamma2: f64,
    /// Single-pass parametric amplitude gain ε (rad/s).
    pub epsilon: f64,
    /// OPO bandwidth Δω, the envelope decay constant (rad/s).
    pub bandwidth: f64,
    /// Free spectral range ΔΩ (rad/s).
    pub fsr: f64,
    /// 2N+1 longitudinal modes contribute.
    pub n_modes: u32,
    /// Lossy-to-lossless finesse ratio F/F₀.
    pub finesse_ratio: f64,
}

impl CavityParams {
    /// A lossless cavity (γ₂ = 0, F/F₀ = 1) whose output coupling equals the
    /// bandwidth.
    pub fn lossless(bandwidth: f64, fsr: f64, n_modes: u32, epsilon: f64) -> Self {
        Self {
            gamma1: bandwidth,
            gamma2: 0.0,
            epsilon,
            bandwidth,
            fsr,
            n_modes,
            finesse_ratio: 1.0,
        }
    }

    /// Cavity round-trip time 2π/ΔΩ in seconds.
    pub fn round_trip_time(&self) -> f64 {
        2.0 * PI / self.fsr
    }

    /// Checks the hard invariants and returns soft diagnostics.
    pub fn validate(&self) -> Result<Vec<Diagnostic>, ModelError> {
        check(self.gamma1 > 0.0, "gamma1", self.gamma1, "must be > 0")?;
        check(self.gamma2 >= 0.0, "gamma2", self.gamma2, "must be >= 0")?;
        check(true, "epsilon", self.epsilon, "")?;
        check(self.bandwidth > 0.0, "bandwidth", self.bandwidth, "must be > 0")?;
        check(self.fsr > 0.0, "fsr", self.fsr, "must be > 0")?;
        check(
            self.bandwidth < self.fsr,
            "bandwidth",
            self.bandwidth,
            "must be below the free spectral range",
        )?;
        check(
            self.finesse_ratio > 0.0 && self.finesse_ratio <= 1.0,
            "finesse_ratio",
            self.finesse_ratio,
            "must lie in (0, 1]",
        )?;
        let threshold = (self.gamma1 + self.gamma2) / 4.0;
        let mut diags = Vec::new();
        if self.epsilon.abs() >= threshold {
            diags.push(Diagnostic::NearThreshold {
                epsilon: self.epsilon,
                threshold,
            });
        }
        Ok(diags)
    }
}

/// The four complex cavity gains at frequency offset ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGains {
    /// G₁: transfer of the coupled-in vacuum mode.
    pub direct_in: Complex64,
    /// g₁: conjugate (parametric) transfer of the coupled-in vacuum mode.
    pub conjugate_in: Complex64,
    /// G₂: transfer of the loss-channel vacuum mode.
    pub direct_loss: Complex64,
    /// g₂: conjugate transfer of the loss-channel vacuum mode.
    pub conjugate_loss: Complex64,
}

pub fn gain_functions(params: &CavityParams, omega: f64) -> Result<CavityGains, ModelError> {
    if !omega.is_finite() {
        return Err(ModelError::NonFinite { name: "omega" });
    }
    let g1 = params.gamma1;
    let g2 = params.gamma2;
    let denom = Complex64::new(g1 + g2, -2.0 * omega);
    let denom_sq = denom * denom;
    let root = (g1 * g2).sqrt();
    Ok(CavityGains {
        direct_in: Complex64::new(g1 - g2, 2.0 * omega) / denom,
        conjugate_in: Complex64::from(4.0 * params.epsilon * g1) / denom_sq,
        direct_loss: Complex64::from(2.0 * root) / denom,
        conjugate_loss: Complex64::from(4.0 * params.epsilon * root) / denom_sq,
    })
}

/// Comb factor sin²((2N+1)θ)/sin²θ of 2N+1 interfering modes.
///
/// Equal to |Σ_{m=-N..N} e^{2imθ}|²; the value at θ = kπ is (2N+1)².
pub fn dirichlet_comb(theta: f64, n_modes: u32) -> f64 {
    let k = 2.0 * f64::from(n_modes) + 1.0;
    if !theta.is_finite() {
        return f64::NAN;
    }
    // The factor is π-periodic for odd 2N+1; reduce to [-π/2, π/2].
    let r = theta - PI * (theta / PI).round();
    if r == 0.0 {
        return k * k;
    }
    let ratio = (k * r).sin() / r.sin();
    ratio * ratio
}

/// Multimode intensity correlation Γ²(τ) including the flat pair pedestal.
pub fn gamma2_analytic(params: &CavityParams, tau: f64) -> f64 {
    let eps = params.epsilon.abs();
    let modes = 2.0 * f64::from(params.n_modes) + 1.0;
    let pedestal = (2.0 * eps * modes / params.bandwidth).powi(2);
    let comb = comb_term(params, tau);
    eps * eps * params.finesse_ratio.powi(2) * (pedestal + comb)
}

/// The τ-dependent part e^{-Δω|τ|}·sin²((2N+1)ΔΩτ/2)/sin²(ΔΩτ/2), without the
/// |ε|²(F/F₀)² prefactor.
pub fn comb_term(params: &CavityParams, tau: f64) -> f64 {
    (-params.bandwidth * tau.abs()).exp() * dirichlet_comb(params.fsr * tau / 2.0, params.n_modes)
}

/// Timing-jitter density p(τ) = (ln2/τ_D)·exp(-2|τ|ln2/τ_D), FWHM τ_D.
pub fn jitter_pdf(tau: f64, tau_d: f64) -> Result<f64, ModelError> {
    check(tau_d > 0.0, "tau_d", tau_d, "must be > 0")?;
    Ok(LN_2 / tau_d * (-2.0 * tau.abs() * LN_2 / tau_d).exp())
}

/// Parameters of the jitter-averaged comb used to fit coincidence histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombFitParams {
    /// Count scale C₁.
    pub c1: f64,
    /// Flat pedestal C₂ in units of C₁.
    pub c2: f64,
    /// Envelope decay constant Δω (rad/s).
    pub bandwidth: f64,
    /// Electronic delay offset τ₀ (s).
    pub tau0: f64,
    /// Tooth spacing, the cavity round-trip time (s).
    pub tau_opo: f64,
    /// Detector resolving time τ_D (s).
    pub tau_d: f64,
    /// Teeth n ∈ [-n_sum, n_sum] are summed.
    pub n_sum: u32,
}

impl CombFitParams {
    /// Smallest n_sum whose omitted envelope weight is below [`TAIL_WEIGHT_LIMIT`].
    pub fn min_n_sum(bandwidth: f64, tau_opo: f64) -> u32 {
        let n = (1.0 / TAIL_WEIGHT_LIMIT).ln() / (bandwidth * tau_opo);
        if n.is_finite() {
            (n.floor() as u32).saturating_add(1)
        } else {
            u32::MAX
        }
    }

    /// Envelope weight e^{-Δω·n_sum·τ_opo} of the first omitted tooth.
    pub fn tail_weight(&self) -> f64 {
        (-self.bandwidth * f64::from(self.n_sum) * self.tau_opo).exp()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check(self.c1 > 0.0, "c1", self.c1, "must be > 0")?;
        check(self.c2 >= 0.0, "c2", self.c2, "must be >= 0")?;
        check(self.bandwidth > 0.0, "bandwidth", self.bandwidth, "must be > 0")?;
        check(true, "tau0", self.tau0, "")?;
        check(self.tau_opo > 0.0, "tau_opo", self.tau_opo, "must be > 0")?;
        check(self.tau_d > 0.0, "tau_d", self.tau_d, "must be > 0")?;
        let weight = self.tail_weight();
        if weight >= TAIL_WEIGHT_LIMIT {
            return Err(ModelError::Truncation {
                n_sum: self.n_sum,
                weight,
            });
        }
        Ok(())
    }

    /// Jitter decay rate 2ln2/τ_D (1/s).
    fn jitter_rate(&self) -> f64 {
        2.0 * LN_2 / self.tau_d
    }

    /// Visits every tooth n that contributes at `tau`, nearest tooth first.
    /// The callback receives (n, signed distance τ-nτ_opo-τ₀).
    fn for_each_tooth(&self, tau: f64, mut f: impl FnMut(i64, f64)) {
        let n_sum = i64::from(self.n_sum);
        let rate = self.jitter_rate();
        let d = tau - self.tau0;
        let nearest = ((d / self.tau_opo).round() as i64).clamp(-n_sum, n_sum);
        let offset = |n: i64| d - n as f64 * self.tau_opo;
        f(nearest, offset(nearest));
        let mut n = nearest + 1;
        while n <= n_sum {
            let u = offset(n);
            f(n, u);
            if rate * u.abs() > TOOTH_ARG_CUTOFF {
                break;
            }
            n += 1;
        }
        let mut n = nearest - 1;
        while n >= -n_sum {
            let u = offset(n);
            f(n, u);
            if rate * u.abs() > TOOTH_ARG_CUTOFF {
                break;
            }
            n -= 1;
        }
    }
}

/// Jitter-averaged tooth profile (1+x)e^{-x}.
#[inline]
pub fn tooth_shape(x: f64) -> f64 {
    (1.0 + x) * (-x).exp()
}

/// Jitter-averaged comb
/// C₁[C₂ + e^{-Δω|τ-τ₀|}·Σₙ(1+xₙ)e^{-xₙ}], xₙ = 2|τ-nτ_opo-τ₀|ln2/τ_D.
pub fn gamma2_comb_fit(params: &CombFitParams, tau: f64) -> f64 {
    let rate = params.jitter_rate();
    let mut sum = 0.0;
    params.for_each_tooth(tau, |_, u| sum += tooth_shape(rate * u.abs()));
    let envelope = (-params.bandwidth * (tau - params.tau0).abs()).exp();
    params.c1 * (params.c2 + envelope * sum)
}

/// Order of the continuous parameters in gradients and fit vectors.
pub const COMB_PARAM_NAMES: [&str; 6] = ["c1", "c2", "bandwidth", "tau0", "tau_opo", "tau_d"];

/// [`gamma2_comb_fit`] together with its partial derivatives with respect to
/// (c1, c2, bandwidth, tau0, tau_opo, tau_d).
pub fn gamma2_comb_fit_with_gradient(params: &CombFitParams, tau: f64) -> (f64, [f64; 6]) {
    let rate = params.jitter_rate();
    let d = tau - params.tau0;
    let envelope = (-params.bandwidth * d.abs()).exp();

    // S = Σ (1+x)e^{-x}; dS/dx = -x e^{-x}; x = rate·|u|.
    let mut sum = 0.0;
    let mut d_tau0 = 0.0;
    let mut d_tau_opo = 0.0;
    let mut d_tau_d = 0.0;
    params.for_each_tooth(tau, |n, u| {
        let x = rate * u.abs();
        let e = (-x).exp();
        sum += (1.0 + x) * e;
        let slope = -x * e;
        let sign = u.signum();
        // ∂u/∂τ₀ = -1, ∂u/∂τ_opo = -n, ∂x/∂τ_D = -x/τ_D
        d_tau0 -= slope * rate * sign;
        d_tau_opo -= slope * rate * sign * n as f64;
        d_tau_d -= slope * x / params.tau_d;
    });

    let c1 = params.c1;
    let value = c1 * (params.c2 + envelope * sum);
    let env_d_tau0 = params.bandwidth * d.signum() * envelope;
    let grad = [
        params.c2 + envelope * sum,
        c1,
        -c1 * d.abs() * envelope * sum,
        c1 * (env_d_tau0 * sum + envelope * d_tau0),
        c1 * envelope * d_tau_opo,
        c1 * envelope * d_tau_d,
    ];
    (value, grad)
}
