//! Recovery of the comb parameters from a coincidence histogram.
//!
//! The optimiser is a bounded Levenberg-Marquardt iteration on the six
//! continuous parameters. Steps solve (H + λ·diag H)δ = -½∇f with H the
//! Gauss-Newton matrix JᵀWJ and ∇f the exact objective gradient, and are only
//! accepted when the objective decreases, so the sequence of accepted
//! objectives is monotone. Parameters are clipped to their bounds after every
//! step. The tooth count n_sum is never fitted.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::histogram::{Histogram, TimeRange};
use crate::model::{gamma2_comb_fit_with_gradient, tooth_shape, CombFitParams, ModelError};
use crate::units::{mhz_to_angular, ps_to_s, s_to_ps};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("every bin is masked")]
    AllMasked,
    #[error("no detectable periodicity: {0}")]
    NoPeriodicity(PeriodicityDiagnostics),
    #[error("bounds for `{param}` are invalid: lower {lower} must be below upper {upper}")]
    InvalidBounds { param: &'static str, lower: f64, upper: f64 },
    #[error("data and model lengths differ")]
    Shape,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What the period search saw when it gave up.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicityDiagnostics {
    pub visible_bins: usize,
    /// Lag (in bins) of the strongest side lobe, if any was found.
    pub best_lag_bins: Option<f64>,
    /// Normalised autocorrelation at that lag.
    pub best_value: f64,
    pub reason: &'static str,
}

impl std::fmt::Display for PeriodicityDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (visible_bins={}, best_lag_bins={}, best_autocorrelation={:.4})",
            self.reason,
            self.visible_bins,
            self.best_lag_bins.map_or("none".to_string(), |l| format!("{l:.2}")),
            self.best_value
        )
    }
}

/// Minimum normalised autocorrelation of the first side lobe.
const MIN_PERIODIC_CORRELATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    LeastSquares,
    #[default]
    PoissonWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitParam {
    C1,
    C2,
    Bandwidth,
    Tau0,
    TauOpo,
    TauD,
}

impl FitParam {
    pub const ALL: [FitParam; 6] = [
        FitParam::C1,
        FitParam::C2,
        FitParam::Bandwidth,
        FitParam::Tau0,
        FitParam::TauOpo,
        FitParam::TauD,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        crate::model::COMB_PARAM_NAMES[self.index()]
    }

    /// Typical magnitude used to condition the normal equations.
    fn scale(self) -> f64 {
        match self {
            FitParam::C1 | FitParam::C2 => 1.0,
            FitParam::Bandwidth => mhz_to_angular(1.0),
            FitParam::Tau0 | FitParam::TauOpo => 1e-9,
            FitParam::TauD => 1e-10,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

pub fn params_to_array(p: &CombFitParams) -> [f64; 6] {
    [p.c1, p.c2, p.bandwidth, p.tau0, p.tau_opo, p.tau_d]
}

pub fn array_to_params(a: &[f64; 6], n_sum: u32) -> CombFitParams {
    CombFitParams {
        c1: a[0],
        c2: a[1],
        bandwidth: a[2],
        tau0: a[3],
        tau_opo: a[4],
        tau_d: a[5],
        n_sum,
    }
}

/// How the model is evaluated within a bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntraBin {
    /// Simpson's rule when the bin is wider than τ_D/10, centre otherwise.
    #[default]
    Auto,
    Center,
    Simpson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Extra excluded delay ranges, on top of the histogram's own mask.
    pub mask: Vec<TimeRange>,
    /// Per-parameter (lower, upper) in SI units; `None` derives them from the
    /// data axis.
    pub bounds: Option<[(f64, f64); 6]>,
    pub frozen: Vec<FitParam>,
    /// Fixed tooth summation range; `None` covers the data span and the
    /// envelope tail criterion.
    pub n_sum: Option<u32>,
    pub loss: Loss,
    pub max_iter: usize,
    /// Relative objective decrease below which the fit has converged.
    pub tol: f64,
    pub intra_bin: IntraBin,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mask: Vec::new(),
            bounds: None,
            frozen: Vec::new(),
            n_sum: None,
            loss: Loss::PoissonWeighted,
            max_iter: 200,
            tol: 1e-10,
            intra_bin: IntraBin::Auto,
        }
    }
}

/// Per-bin values on a uniform axis: the fitter's view of a histogram.
/// Values are real so that noiseless model curves can be fitted directly.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    origin_s: f64,
    bin_width_s: f64,
    values: Vec<f64>,
    visible: Vec<bool>,
}

impl CurveData {
    pub fn from_histogram(hist: &Histogram, extra_mask: &[TimeRange]) -> Self {
        let values = hist.counts().iter().map(|&c| c as f64).collect();
        let visible = (0..hist.len())
            .map(|i| {
                let lo = hist.bin_start_ps(i);
                let hi = hist.bin_start_ps(i + 1);
                !hist.is_masked(i) && !extra_mask.iter().any(|r| r.overlaps(lo, hi))
            })
            .collect();
        Self {
            origin_s: ps_to_s(hist.origin_ps()),
            bin_width_s: ps_to_s(hist.bin_width_ps()),
            values,
            visible,
        }
    }

    /// Real-valued data on a ps axis with masked ranges.
    pub fn from_values(origin_ps: f64, bin_width_ps: f64, values: Vec<f64>, mask: &[TimeRange]) -> Self {
        let visible = (0..values.len())
            .map(|i| {
                let lo = origin_ps + i as f64 * bin_width_ps;
                let hi = origin_ps + (i + 1) as f64 * bin_width_ps;
                !mask.iter().any(|r| r.overlaps(lo, hi))
            })
            .collect();
        Self {
            origin_s: ps_to_s(origin_ps),
            bin_width_s: ps_to_s(bin_width_ps),
            values,
            visible,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_visible(&self, i: usize) -> bool {
        self.visible[i]
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_s
    }

    pub fn center_s(&self, i: usize) -> f64 {
        self.origin_s + (i as f64 + 0.5) * self.bin_width_s
    }

    fn start_s(&self, i: usize) -> f64 {
        self.origin_s + i as f64 * self.bin_width_s
    }

    fn visible_range(&self) -> Option<(usize, usize)> {
        let first = self.visible.iter().position(|v| *v)?;
        let last = self.visible.iter().rposition(|v| *v)?;
        Some((first, last))
    }
}

fn use_simpson(opts: &FitOptions, data: &CurveData, p: &CombFitParams) -> bool {
    match opts.intra_bin {
        IntraBin::Auto => data.bin_width_s > p.tau_d / 10.0,
        IntraBin::Center => false,
        IntraBin::Simpson => true,
    }
}

/// Model value and gradient for bin `i`.
fn bin_model(p: &CombFitParams, data: &CurveData, i: usize, simpson: bool) -> (f64, [f64; 6]) {
    if !simpson {
        return gamma2_comb_fit_with_gradient(p, data.center_s(i));
    }
    let a = data.start_s(i);
    let h = data.bin_width_s;
    let mut v = 0.0;
    let mut g = [0.0; 6];
    for (t, w) in [(a, 1.0 / 6.0), (a + h / 2.0, 4.0 / 6.0), (a + h, 1.0 / 6.0)] {
        let (fv, fg) = gamma2_comb_fit_with_gradient(p, t);
        v += w * fv;
        g.iter_mut().zip(fg).for_each(|(x, y)| *x += w * y);
    }
    (v, g)
}

/// Model value per bin under the given options.
pub fn model_curve(p: &CombFitParams, data: &CurveData, opts: &FitOptions) -> Vec<f64> {
    let simpson = use_simpson(opts, data, p);
    (0..data.len()).map(|i| bin_model(p, data, i, simpson).0).collect()
}

fn weight(loss: Loss, m: f64) -> f64 {
    match loss {
        Loss::LeastSquares => 1.0,
        Loss::PoissonWeighted => 1.0 / m.max(1.0),
    }
}

/// Σ (yᵢ - mᵢ)² or Σ (yᵢ - mᵢ)²/max(mᵢ, 1) over visible bins.
pub fn objective(p: &CombFitParams, data: &CurveData, opts: &FitOptions) -> Result<f64, FitError> {
    if data.visible_count() == 0 {
        return Err(FitError::AllMasked);
    }
    let simpson = use_simpson(opts, data, p);
    let mut s = 0.0;
    for i in 0..data.len() {
        if !data.visible[i] {
            continue;
        }
        let m = bin_model(p, data, i, simpson).0;
        let r = data.values[i] - m;
        s += r * r * weight(opts.loss, m);
    }
    Ok(s)
}

/// Exact gradient of [`objective`] with respect to
/// (c1, c2, bandwidth, tau0, tau_opo, tau_d), including the dependence of
/// the Poisson weights on the model.
pub fn objective_gradient(p: &CombFitParams, data: &CurveData, opts: &FitOptions) -> Result<[f64; 6], FitError> {
    Ok(accumulate(p, data, opts, false)?.gradient)
}

struct Normal {
    objective: f64,
    gradient: [f64; 6],
    /// Gauss-Newton matrix Σ wᵢ ∂mᵢ ∂mᵢᵀ.
    hessian: [[f64; 6]; 6],
}

fn accumulate(p: &CombFitParams, data: &CurveData, opts: &FitOptions, with_hessian: bool) -> Result<Normal, FitError> {
    if data.visible_count() == 0 {
        return Err(FitError::AllMasked);
    }
    let simpson = use_simpson(opts, data, p);
    let mut out = Normal {
        objective: 0.0,
        gradient: [0.0; 6],
        hessian: [[0.0; 6]; 6],
    };
    for i in 0..data.len() {
        if !data.visible[i] {
            continue;
        }
        let (m, dm) = bin_model(p, data, i, simpson);
        let r = data.values[i] - m;
        let w = weight(opts.loss, m);
        out.objective += r * r * w;
        // d/dp [r² w] = -2 r w dm + r² dw/dm dm
        let dw = match opts.loss {
            Loss::PoissonWeighted if m > 1.0 => -w * w,
            _ => 0.0,
        };
        let coef = -2.0 * r * w + r * r * dw;
        for (g, d) in out.gradient.iter_mut().zip(&dm) {
            *g += coef * d;
        }
        if with_hessian {
            for a in 0..6 {
                for b in a..6 {
                    out.hessian[a][b] += w * dm[a] * dm[b];
                }
            }
        }
    }
    for a in 0..6 {
        for b in 0..a {
            out.hessian[a][b] = out.hessian[b][a];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: CombFitParams,
    pub objective: f64,
    /// Objective at the starting point.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Standard errors from the local quadratic approximation, `None` for
    /// frozen parameters or a singular curvature matrix.
    pub stderr: [Option<f64>; 6],
    pub visible_bins: usize,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn default_bounds(data: &CurveData) -> [(f64, f64); 6] {
    let (first, last) = data.visible_range().unwrap_or((0, data.len().saturating_sub(1)));
    let lo = data.start_s(first);
    let hi = data.start_s(last + 1);
    let span = hi - lo;
    let bw = data.bin_width_s;
    [
        (1e-12, f64::INFINITY),
        (0.0, f64::INFINITY),
        (1.0, 1e13),
        (lo - span, hi + span),
        (2.0 * bw, span),
        (bw / 10.0, span),
    ]
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_bounds(bounds: &[(f64, f64); 6], frozen: &[bool; 6]) -> Result<(), FitError> {
    for p in FitParam::ALL {
        let (lo, hi) = bounds[p.index()];
        if !frozen[p.index()] && !(lo < hi) {
            return Err(FitError::InvalidBounds {
                param: p.name(),
                lower: lo,
                upper: hi,
            });
        }
    }
    Ok(())
}

fn auto_n_sum(guess: &CombFitParams, data: &CurveData) -> u32 {
    let (first, last) = data.visible_range().unwrap_or((0, 0));
    let far = (data.start_s(first) - guess.tau0)
        .abs()
        .max((data.start_s(last + 1) - guess.tau0).abs());
    let cover = (2.0 * far / guess.tau_opo).ceil() + 2.0;
    let tail = CombFitParams::min_n_sum(guess.bandwidth / 4.0, guess.tau_opo / 2.0);
    (cover.min(1e6) as u32).max(tail.min(1_000_000))
}

/// Fits a histogram; the starting point defaults to [`initial_guess`].
pub fn fit(hist: &Histogram, opts: &FitOptions, guess: Option<CombFitParams>) -> Result<FitResult, FitError> {
    let data = CurveData::from_histogram(hist, &opts.mask);
    let guess = match guess {
        Some(g) => g,
        None => initial_guess_curve(&data)?,
    };
    fit_curve(&data, opts, guess)
}

/// Fits real-valued per-bin data from a starting point.
pub fn fit_curve(data: &CurveData, opts: &FitOptions, guess: CombFitParams) -> Result<FitResult, FitError> {
    let visible_bins = data.visible_count();
    if visible_bins == 0 {
        return Err(FitError::AllMasked);
    }
    let mut frozen = [false; 6];
    for p in &opts.frozen {
        frozen[p.index()] = true;
    }
    let bounds = opts.bounds.unwrap_or_else(|| default_bounds(data));
    check_bounds(&bounds, &frozen)?;
    let n_sum = opts.n_sum.unwrap_or_else(|| auto_n_sum(&guess, data));

    let clip = |a: &mut [f64; 6]| {
        for k in 0..6 {
            if !frozen[k] {
                a[k] = a[k].clamp(bounds[k].0, bounds[k].1);
            }
        }
    };
    let mut x = params_to_array(&guess);
    clip(&mut x);
    let free: Vec<usize> = (0..6).filter(|k| !frozen[*k]).collect();
    let scale: Vec<f64> = free.iter().map(|&k| FitParam::ALL[k].scale()).collect();

    let mut current = accumulate(&array_to_params(&x, n_sum), data, opts, true)?;
    let initial_objective = current.objective;
    let mut trace = vec![initial_objective];
    let data_norm: f64 = (0..data.len())
        .filter(|&i| data.visible[i])
        .map(|i| data.values[i] * data.values[i])
        .sum();
    let negligible = 1e-24 * (data_norm + 1.0);

    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = current.objective <= negligible || free.is_empty();
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let nf = free.len();
        let h = DMatrix::from_fn(nf, nf, |a, b| current.hessian[free[a]][free[b]] * scale[a] * scale[b]);
        let g = DVector::from_fn(nf, |a, _| -0.5 * current.gradient[free[a]] * scale[a]);
        let diag_floor = 1e-12 * (0..nf).map(|a| h[(a, a)]).fold(0.0, f64::max).max(1e-300);

        let mut accepted = None;
        while lambda <= 1e16 {
            let mut damped = h.clone();
            for a in 0..nf {
                damped[(a, a)] += lambda * h[(a, a)].max(diag_floor);
            }
            let step = damped
                .clone()
                .cholesky()
                .map(|c| c.solve(&g))
                .or_else(|| damped.lu().solve(&g));
            if let Some(step) = step {
                let mut trial = x;
                for (a, &k) in free.iter().enumerate() {
                    trial[k] += step[a] * scale[a];
                }
                clip(&mut trial);
                let tp = array_to_params(&trial, n_sum);
                let obj = objective(&tp, data, opts)?;
                if obj.is_finite() && obj < current.objective {
                    accepted = Some((trial, obj));
                    break;
                }
            }
            lambda *= 10.0;
        }

        match accepted {
            Some((trial, obj)) => {
                let rel = (current.objective - obj) / current.objective;
                x = trial;
                current = accumulate(&array_to_params(&x, n_sum), data, opts, true)?;
                trace.push(current.objective);
                debug_assert!((current.objective - obj).abs() <= 1e-9 * obj.max(1e-300));
                lambda = (lambda / 10.0).max(1e-12);
                if rel < opts.tol || current.objective <= negligible {
                    converged = true;
                }
            }
            // No damping yields a decrease: a stationary point at machine precision.
            None => converged = true,
        }
    }

    let params = array_to_params(&x, n_sum);
    let stderr = standard_errors(&current, &free, opts.loss, visible_bins);
    Ok(FitResult {
        params,
        objective: current.objective,
        initial_objective,
        iterations,
        converged,
        stderr,
        visible_bins,
        trace,
    })
}

fn standard_errors(n: &Normal, free: &[usize], loss: Loss, visible: usize) -> [Option<f64>; 6] {
    let mut out = [None; 6];
    let nf = free.len();
    if nf == 0 {
        return out;
    }
    let scale: Vec<f64> = free.iter().map(|&k| FitParam::ALL[k].scale()).collect();
    let h = DMatrix::from_fn(nf, nf, |a, b| n.hessian[free[a]][free[b]] * scale[a] * scale[b]);
    let Some(cov) = h.try_inverse() else {
        return out;
    };
    let sigma2 = match loss {
        Loss::PoissonWeighted => 1.0,
        Loss::LeastSquares if visible > nf => n.objective / (visible - nf) as f64,
        Loss::LeastSquares => return out,
    };
    for (a, &k) in free.iter().enumerate() {
        let v = cov[(a, a)] * sigma2;
        if v.is_finite() && v >= 0.0 {
            out[k] = Some(v.sqrt() * scale[a]);
        }
    }
    out
}

/// Normalised autocorrelation of the visible, mean-subtracted values for lags
/// 0..=max_lag (in bins). Masked bins are treated as missing.
pub fn autocorrelation(data: &CurveData, max_lag: usize) -> Vec<f64> {
    let Some((first, last)) = data.visible_range() else {
        return Vec::new();
    };
    let n = last - first + 1;
    let vis = &data.visible[first..=last];
    let vals = &data.values[first..=last];
    let count = vis.iter().filter(|v| **v).count() as f64;
    let mean = vals.iter().zip(vis).filter(|(_, v)| **v).map(|(x, _)| x).sum::<f64>() / count;
    let x: Vec<f64> = vals
        .iter()
        .zip(vis)
        .map(|(v, ok)| if *ok { v - mean } else { 0.0 })
        .collect();
    let max_lag = max_lag.min(n - 1);
    let mut r = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut s = 0.0;
        let mut pairs = 0usize;
        for i in 0..n - lag {
            if vis[i] && vis[i + lag] {
                s += x[i] * x[i + lag];
                pairs += 1;
            }
        }
        r.push(if pairs > 0 { s / pairs as f64 } else { 0.0 });
    }
    let r0 = r[0];
    if r0 > 0.0 {
        r.iter_mut().for_each(|v| *v /= r0);
    }
    r
}

/// Period (in bins, sub-bin refined) of the strongest comb in `data`.
pub fn dominant_period(data: &CurveData) -> Result<f64, FitError> {
    let visible_bins = data.visible_count();
    let fail = |best_lag_bins, best_value, reason| {
        Err(FitError::NoPeriodicity(PeriodicityDiagnostics {
            visible_bins,
            best_lag_bins,
            best_value,
            reason,
        }))
    };
    let Some((first, last)) = data.visible_range() else {
        return fail(None, 0.0, "no visible bins");
    };
    let span = last - first + 1;
    if span < 8 {
        return fail(None, 0.0, "too few visible bins");
    }
    let r = autocorrelation(data, span / 2);
    if r.is_empty() || r[0] <= 0.0 {
        return fail(None, 0.0, "no variation in the data");
    }
    let Some(first_neg) = r.iter().position(|v| *v < 0.0) else {
        return fail(None, 0.0, "autocorrelation never decorrelates");
    };
    let tail = &r[first_neg..];
    let global = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if global < MIN_PERIODIC_CORRELATION {
        let lag = tail.iter().position(|v| *v == global).map(|p| (p + first_neg) as f64);
        return fail(lag, global, "autocorrelation side lobe too weak");
    }
    // First positive lobe that reaches half the strongest side lobe.
    let mut i = first_neg;
    let mut best = None;
    while i < r.len() {
        if r[i] <= 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < r.len() && r[i] > 0.0 {
            i += 1;
        }
        let (arg, val) = (start..i).map(|j| (j, r[j])).fold((start, f64::NEG_INFINITY), |a, b| {
            if b.1 > a.1 {
                b
            } else {
                a
            }
        });
        if val >= 0.5 * global {
            best = Some((arg, val));
            break;
        }
    }
    let Some((lag, val)) = best else {
        return fail(None, global, "no qualifying side lobe");
    };
    if lag == 0 || lag + 1 >= r.len() {
        return fail(Some(lag as f64), val, "side lobe at the edge of the lag range");
    }
    // Centroid of the part of the lobe above half its height.
    let half = 0.5 * val;
    let mut a = lag;
    while a > 0 && r[a - 1] > half {
        a -= 1;
    }
    let mut b = lag;
    while b + 1 < r.len() && r[b + 1] > half {
        b += 1;
    }
    let (mut wsum, mut lsum) = (0.0, 0.0);
    for (j, v) in r.iter().enumerate().take(b + 1).skip(a) {
        wsum += v - half;
        lsum += (v - half) * j as f64;
    }
    let period = if wsum > 0.0 { lsum / wsum } else { lag as f64 };
    if 3.0 * period > span as f64 {
        return fail(Some(period), val, "fewer than three periods in the visible window");
    }
    Ok(period)
}

/// How a tooth's height is measured for the envelope regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToothMeasure {
    /// Value of the bin containing the tooth centre.
    Peak,
    /// Sum over the one-period window around the centre, less a baseline per bin.
    Area { baseline: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFit {
    /// Decay constant Δω (rad/s) from the log-linear regression.
    pub bandwidth: f64,
    /// Regression intercept: log tooth height at zero delay.
    pub log_height: f64,
    /// (tooth order, height) pairs used.
    pub teeth: Vec<(i64, f64)>,
}

/// Log-linear regression of tooth heights against |n|·τ_opo for |n| ≤
/// `max_order`, using only teeth whose measurement window is fully visible.
pub fn tooth_envelope(
    data: &CurveData,
    tau0: f64,
    tau_opo: f64,
    max_order: i64,
    measure: ToothMeasure,
) -> Option<EnvelopeFit> {
    let bw = data.bin_width_s;
    let index = |t: f64| -> Option<usize> {
        let x = ((t - data.origin_s) / bw).floor();
        (x >= 0.0 && x < data.len() as f64).then_some(x as usize)
    };
    let mut teeth = Vec::new();
    for n in -max_order..=max_order {
        let c = tau0 + n as f64 * tau_opo;
        let height = match measure {
            ToothMeasure::Peak => index(c).filter(|&i| data.visible[i]).map(|i| data.values[i]),
            ToothMeasure::Area { baseline } => {
                let (Some(a), Some(b)) = (index(c - tau_opo / 2.0), index(c + tau_opo / 2.0)) else {
                    continue;
                };
                (a..b)
                    .all(|i| data.visible[i])
                    .then(|| (a..b).map(|i| data.values[i] - baseline).sum())
            }
        };
        if let Some(h) = height.filter(|h| *h > 0.0) {
            teeth.push((n, h));
        }
    }
    if teeth.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = teeth
        .iter()
        .map(|&(n, h)| (n.unsigned_abs() as f64 * tau_opo, h.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(EnvelopeFit {
        bandwidth: -slope,
        log_height: my - slope * mx,
        teeth,
    })
}

/// Half-width point x of the tooth shape: (1+x)e^{-x} = 1/2.
fn tooth_half_point() -> f64 {
    let mut x: f64 = 1.7;
    for _ in 0..50 {
        let f = tooth_shape(x) - 0.5;
        let df = -x * (-x).exp();
        x -= f / df;
    }
    x
}

/// FWHM of a (1+x)e^{-x} tooth in units of τ_D.
pub fn tooth_fwhm_factor() -> f64 {
    tooth_half_point() / LN_2
}

/// Starting point for [`fit`] from the histogram alone.
pub fn initial_guess(hist: &Histogram) -> Result<CombFitParams, FitError> {
    initial_guess_curve(&CurveData::from_histogram(hist, &[]))
}

fn boxcar(data: &CurveData, half: usize) -> Vec<f64> {
    let n = data.len();
    let mut prefix = vec![0.0; n + 1];
    let mut seen = vec![0usize; n + 1];
    for i in 0..n {
        let v = data.visible[i];
        prefix[i + 1] = prefix[i] + if v { data.values[i] } else { 0.0 };
        seen[i + 1] = seen[i] + usize::from(v);
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(n);
            let c = seen[b] - seen[a];
            if data.visible[i] && c > 0 {
                (prefix[b] - prefix[a]) / c as f64
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn initial_guess_curve(data: &CurveData) -> Result<CombFitParams, FitError> {
    let bw = data.bin_width_s;
    let period_bins = dominant_period(data)?;
    let tau_opo = period_bins * bw;
    let no_teeth = |reason| {
        FitError::NoPeriodicity(PeriodicityDiagnostics {
            visible_bins: data.visible_count(),
            best_lag_bins: Some(period_bins),
            best_value: f64::NAN,
            reason,
        })
    };

    // Highest tooth of the lightly smoothed data, refined by its centroid.
    let smooth = boxcar(data, ((period_bins / 16.0).round() as usize).max(1));
    let peak_bin = (0..data.len())
        .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))
        .ok_or(FitError::AllMasked)?;
    let quarter = (period_bins / 4.0).round() as usize;
    let half = (period_bins / 2.0).round() as usize;
    let lo = peak_bin.saturating_sub(half);
    let hi = (peak_bin + half + 1).min(data.len());
    let floor = (lo..hi)
        .filter(|&i| smooth[i].is_finite())
        .map(|i| smooth[i])
        .fold(f64::INFINITY, f64::min);
    let (mut wsum, mut tsum) = (0.0, 0.0);
    for i in peak_bin.saturating_sub(quarter)..(peak_bin + quarter + 1).min(data.len()) {
        if data.visible[i] {
            let w = (data.values[i] - floor).max(0.0);
            wsum += w;
            tsum += w * data.center_s(i);
        }
    }
    let tau0 = if wsum > 0.0 { tsum / wsum } else { data.center_s(peak_bin) };

    // Mean level half-way between teeth, in a ±T/10 window.
    let mid_levels: Vec<(f64, f64)> = {
        let (first, last) = data.visible_range().ok_or(FitError::AllMasked)?;
        let (t_first, t_last) = (data.center_s(first), data.center_s(last));
        let k_lo = ((t_first - tau0) / tau_opo).floor() as i64 - 1;
        let k_hi = ((t_last - tau0) / tau_opo).ceil() as i64 + 1;
        let win = (period_bins / 10.0).round().max(1.0) as i64;
        (k_lo..=k_hi)
            .filter_map(|k| {
                let t = tau0 + (k as f64 + 0.5) * tau_opo;
                let c = ((t - data.origin_s) / bw).floor() as i64;
                let (a, b) = (c - win, c + win);
                if a < 0 || b >= data.len() as i64 {
                    return None;
                }
                let idx = a as usize..=b as usize;
                idx.clone()
                    .all(|i| data.visible[i])
                    .then(|| (t, idx.map(|i| data.values[i]).sum::<f64>() / (2 * win + 1) as f64))
            })
            .collect()
    };
    let baseline = mid_levels.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let baseline = if baseline.is_finite() { baseline.max(0.0) } else { 0.0 };

    // Central tooth width, measured on the lightly smoothed data.
    let peak_val = smooth[peak_bin] - baseline;
    if !(peak_val > 0.0) {
        return Err(no_teeth("central tooth not above baseline"));
    }
    let half_level = baseline + peak_val / 2.0;
    let cross = |dir: i64| -> Option<f64> {
        let mut i = peak_bin as i64;
        for _ in 0..half {
            let j = i + dir;
            if j < 0 || j >= data.len() as i64 || !smooth[j as usize].is_finite() {
                return None;
            }
            let (vi, vj) = (smooth[i as usize], smooth[j as usize]);
            if vj <= half_level {
                let frac = (vi - half_level) / (vi - vj);
                return Some((i as f64 + dir as f64 * frac - peak_bin as f64).abs());
            }
            i = j;
        }
        None
    };
    let width_bins = match (cross(-1), cross(1)) {
        (Some(a), Some(b)) => a + b,
        (Some(a), None) | (None, Some(a)) => 2.0 * a,
        (None, None) => return Err(no_teeth("central tooth has no half-maximum crossing")),
    };
    let tau_d = (width_bins * bw / tooth_fwhm_factor()).max(bw);

    let env = tooth_envelope(data, tau0, tau_opo, 10_000, ToothMeasure::Area { baseline })
        .filter(|e| e.teeth.len() >= 3)
        .ok_or_else(|| no_teeth("fewer than three fully visible teeth"))?;
    let span = data.len() as f64 * bw;
    let bandwidth = if env.bandwidth > 0.0 { env.bandwidth } else { 1.0 / span };
    let scale = tau_d / (2.0 * LN_2);
    let c1 = env.log_height.exp() * bw / (4.0 * scale);

    let x_mid = LN_2 * tau_opo / tau_d;
    let tail = 2.0 * tooth_shape(x_mid);
    let mut excess: Vec<f64> = mid_levels
        .iter()
        .map(|(t, level)| level - c1 * (-bandwidth * (t - tau0).abs()).exp() * tail)
        .collect();
    excess.sort_by(f64::total_cmp);
    let background = excess.get(excess.len() / 2).copied().unwrap_or(0.0).max(0.0);

    let guess = CombFitParams {
        c1,
        c2: background / c1,
        bandwidth,
        tau0,
        tau_opo,
        tau_d,
        n_sum: 0,
    };
    Ok(CombFitParams {
        n_sum: auto_n_sum(&guess, data),
        ..guess
    })
}

/// Pearson χ² of counts against expectations, with consecutive visible bins
/// pooled until each group expects at least `min_expected` counts.
/// Returns (χ², number of groups).
pub fn pooled_pearson_chi2(observed: &[f64], expected: &[f64], visible: &[bool], min_expected: f64) -> (f64, usize) {
    let mut chi2 = 0.0;
    let mut groups = 0;
    let (mut o, mut e) = (0.0, 0.0);
    let flush = |o: f64, e: f64, chi2: &mut f64, groups: &mut usize| {
        if e > 0.0 {
            *chi2 += (o - e) * (o - e) / e;
            *groups += 1;
        }
    };
    for i in 0..observed.len() {
        if !visible[i] {
            continue;
        }
        o += observed[i];
        e += expected[i];
        if e >= min_expected {
            flush(o, e, &mut chi2, &mut groups);
            o = 0.0;
            e = 0.0;
        }
    }
    // A short trailing group is folded in as its own term.
    flush(o, e, &mut chi2, &mut groups);
    (chi2, groups)
}

/// One row per bin: (time ps, observed, model, weighted residual), for
/// visible bins only.
pub fn residual_table(p: &CombFitParams, data: &CurveData, opts: &FitOptions) -> Vec<(f64, f64, f64, f64)> {
    let model = model_curve(p, data, opts);
    (0..data.len())
        .filter(|&i| data.visible[i])
        .map(|i| {
            let r = data.values[i] - model[i];
            let wr = r * weight(opts.loss, model[i]).sqrt();
            (s_to_ps(data.center_s(i)), data.values[i], model[i], wr)
        })
        .collect()
}
