//! Monte Carlo generation of coincidence histograms.
//!
//! True pair delays are drawn from the pedestal-free comb density, each
//! detection time is smeared by detector jitter, a flat accidental background
//! is added and the result is binned on a picosecond grid whose leading dead
//! region is zeroed and masked.
//!
//! Work is split into fixed-size chunks, each with its own ChaCha stream
//! derived from the seed, so the histogram does not depend on how many
//! threads process the chunks.

use std::f64::consts::{LN_2, PI};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::etalon::ModeWeights;
use crate::histogram::{Acquisition, Histogram, TimeRange};
use crate::model::{dirichlet_comb, CavityParams, CombFitParams, ModelError};
use crate::units::{ps_to_s, s_to_ps};

/// Pairs handled by one RNG stream.
const CHUNK: u64 = 1 << 16;
/// Accidental streams live in the upper half of the stream space.
const ACCIDENTAL_STREAM: u64 = 1 << 63;
/// Teeth whose envelope weight falls below e^{-40} are never proposed.
const ENVELOPE_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling window [{0}, {1}) s is empty")]
    EmptyWindow(f64, f64),
    #[error("sampling window [{0}, {1}) s contains no comb tooth")]
    NoTooth(f64, f64),
}

/// Source of true pair delays.
#[derive(Debug, Clone, PartialEq)]
pub enum PairModel {
    /// Unfiltered 2N+1 mode comb centred on zero delay.
    Cavity(CavityParams),
    /// Mode comb with per-mode amplitude weights (e.g. behind an etalon),
    /// centred on zero delay. Uses the cavity's bandwidth and FSR.
    Filtered {
        cavity: CavityParams,
        weights: ModeWeights,
    },
    /// Infinitely many modes: zero-width teeth at τ₀ + nτ_opo weighted by
    /// e^{-Δω|n|τ_opo}. The fit model's τ_D plays no role here; jitter comes
    /// from the simulation config.
    Comb(CombFitParams),
}

impl PairModel {
    fn validate(&self) -> Result<(), SimError> {
        match self {
            PairModel::Cavity(c) | PairModel::Filtered { cavity: c, .. } => {
                c.validate()?;
            }
            PairModel::Comb(p) => {
                if !(p.bandwidth > 0.0 && p.tau_opo > 0.0 && p.tau0.is_finite()) {
                    return Err(SimError::Config(
                        "comb model needs bandwidth > 0, tau_opo > 0 and finite tau0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn geometry(&self) -> (f64, f64, f64) {
        match self {
            PairModel::Cavity(c) | PairModel::Filtered { cavity: c, .. } => {
                (0.0, c.round_trip_time(), c.bandwidth)
            }
            PairModel::Comb(p) => (p.tau0, p.tau_opo, p.bandwidth),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of true pairs generated.
    pub pair_count: u64,
    /// Accidental coincidences per true pair, uniform over the window.
    pub background_ratio: f64,
    /// Recorded delay range [t_min, t_max) in ps; truncated to whole bins.
    pub window_ps: (f64, f64),
    /// Dead region at the start of the window, in ps.
    pub dead_before_ps: f64,
    /// Per-detector jitter FWHM in ps.
    pub jitter_fwhm_ps: f64,
    pub bin_width_ps: f64,
    pub seed: u64,
    pub duration_s: Option<f64>,
    pub label: String,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = self.window_ps;
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("window must satisfy t_min < t_max");
        }
        if !(self.bin_width_ps > 0.0 && self.bin_width_ps.is_finite()) {
            return bad("bin width must be positive");
        }
        if hi - lo < self.bin_width_ps {
            return bad("window is narrower than one bin");
        }
        if !(self.background_ratio >= 0.0 && self.background_ratio.is_finite()) {
            return bad("background ratio must be >= 0");
        }
        if !(self.dead_before_ps >= 0.0 && self.dead_before_ps.is_finite()) {
            return bad("dead region must be >= 0");
        }
        if !(self.jitter_fwhm_ps >= 0.0 && self.jitter_fwhm_ps.is_finite()) {
            return bad("jitter FWHM must be >= 0");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.window_ps.1 - self.window_ps.0) / self.bin_width_ps).floor() as usize
    }

    /// Sampling window in seconds: whole bins only.
    fn window_s(&self) -> (f64, f64) {
        let lo = self.window_ps.0;
        let hi = lo + self.n_bins() as f64 * self.bin_width_ps;
        (ps_to_s(lo), ps_to_s(hi))
    }

    /// Number of leading bins touching the dead region.
    fn dead_bins(&self) -> usize {
        ((self.dead_before_ps / self.bin_width_ps).ceil() as usize).min(self.n_bins())
    }

    pub fn accidental_count(&self) -> u64 {
        (self.pair_count as f64 * self.background_ratio).round() as u64
    }
}

/// Bookkeeping of where every generated event ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub pairs: u64,
    pub accidentals: u64,
    pub recorded: u64,
    pub dropped_dead: u64,
    pub dropped_outside: u64,
}

impl SimStats {
    fn merge(mut self, o: SimStats) -> SimStats {
        self.pairs += o.pairs;
        self.accidentals += o.accidentals;
        self.recorded += o.recorded;
        self.dropped_dead += o.dropped_dead;
        self.dropped_outside += o.dropped_outside;
        self
    }
}

/// Intra-tooth profile over one period, x = ΔΩ·u ∈ [-π, π).
#[derive(Debug, Clone)]
enum ToothProfile {
    /// Zero-width tooth.
    Delta,
    /// Flat profile (a single mode).
    Flat,
    /// Rejection sampling against a piecewise-constant upper bound.
    Tabulated {
        cells: WeightedIndex<f64>,
        bounds: Vec<f64>,
        shape: Shape,
    },
}

#[derive(Debug, Clone)]
enum Shape {
    Dirichlet(u32),
    Weighted(ModeWeights),
}

impl Shape {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Shape::Dirichlet(n) => dirichlet_comb(x / 2.0, *n),
            Shape::Weighted(w) => w.intensity(x),
        }
    }
}

impl ToothProfile {
    fn tabulate(shape: Shape, span: f64, peak_bound: f64, mean: f64) -> Self {
        // On each cell f ≤ max(endpoints) + h²·max|f''|/8, and Bernstein's
        // inequality bounds |f''| by span²·max f for a trig polynomial.
        let want = 2.0 * PI * span * (peak_bound / (2.0 * mean)).sqrt();
        let cells_n = (want.max(256.0) as usize).next_power_of_two().min(1 << 22);
        let h = 2.0 * PI / cells_n as f64;
        let grid: Vec<f64> = match &shape {
            Shape::Dirichlet(n) => (0..=cells_n)
                .into_par_iter()
                .map(|j| dirichlet_comb((-PI + j as f64 * h) / 2.0, *n))
                .collect(),
            Shape::Weighted(w) => {
                let coeffs = w.autocorrelation();
                (0..=cells_n)
                    .into_par_iter()
                    .map(|j| cosine_series(&coeffs, -PI + j as f64 * h))
                    .collect()
            }
        };
        let margin = h * h * span * span * peak_bound / 8.0 + 1e-9 * peak_bound;
        let bounds: Vec<f64> = grid.windows(2).map(|p| p[0].max(p[1]) + margin).collect();
        let cells = WeightedIndex::new(&bounds).expect("positive bounds");
        ToothProfile::Tabulated { cells, bounds, shape }
    }

    /// Proposes an offset x ∈ [-π, π) and the probability of accepting it.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            ToothProfile::Delta => (0.0, 1.0),
            ToothProfile::Flat => (rng.random_range(-PI..PI), 1.0),
            ToothProfile::Tabulated { cells, bounds, shape } => {
                let j = cells.sample(rng);
                let h = 2.0 * PI / bounds.len() as f64;
                let x = -PI + (j as f64 + rng.random::<f64>()) * h;
                (x, shape.eval(x) / bounds[j])
            }
        }
    }
}

/// a₀ + 2Σₖ aₖ cos(kx) by the Chebyshev recurrence.
fn cosine_series(coeffs: &[f64], x: f64) -> f64 {
    let c1 = x.cos();
    let (mut prev, mut cur) = (1.0, c1);
    let mut s = coeffs[0];
    for &a in &coeffs[1..] {
        s += 2.0 * a * cur;
        let next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
    }
    s
}

/// Draws true pair delays from a [`PairModel`] restricted to a window.
///
/// A tooth n is proposed with probability ∝ e^{-Δω|n|τ_opo}, an intra-tooth
/// offset from the single-tooth profile, and the pair is accepted with the
/// ratio of the true envelope to the proposal envelope. The accepted delays
/// follow e^{-Δω|τ-c|}·profile exactly.
#[derive(Debug, Clone)]
pub struct PairSampler {
    window: (f64, f64),
    center: f64,
    period: f64,
    bandwidth: f64,
    first_tooth: i64,
    teeth: WeightedIndex<f64>,
    profile: ToothProfile,
}

impl PairSampler {
    /// `window` in seconds.
    pub fn new(model: &PairModel, window: (f64, f64)) -> Result<Self, SimError> {
        model.validate()?;
        let (lo, hi) = window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SimError::EmptyWindow(lo, hi));
        }
        let (center, period, bandwidth) = model.geometry();
        let profile = match model {
            PairModel::Comb(_) => ToothProfile::Delta,
            PairModel::Cavity(c) if c.n_modes == 0 => ToothProfile::Flat,
            PairModel::Cavity(c) => {
                let k = 2.0 * f64::from(c.n_modes) + 1.0;
                ToothProfile::tabulate(Shape::Dirichlet(c.n_modes), k - 1.0, k * k, k)
            }
            PairModel::Filtered { weights, .. } => {
                let nonzero: Vec<i64> = weights.iter().filter(|(_, w)| *w > 0.0).map(|(m, _)| m).collect();
                match (nonzero.first(), nonzero.last()) {
                    (None, _) | (_, None) => {
                        return Err(SimError::Config("all mode weights are zero".into()))
                    }
                    (Some(a), Some(b)) if a == b => ToothProfile::Flat,
                    (Some(a), Some(b)) => {
                        let sum: f64 = weights.as_slice().iter().sum();
                        let mean: f64 = weights.as_slice().iter().map(|w| w * w).sum();
                        ToothProfile::tabulate(Shape::Weighted(weights.clone()), (b - a) as f64, sum * sum, mean)
                    }
                }
            }
        };

        // Teeth whose support meets the window, limited to a finite envelope range.
        let half = match profile {
            ToothProfile::Delta => 0.0,
            _ => period / 2.0,
        };
        let reach = (ENVELOPE_CUTOFF / (bandwidth * period)).ceil() + 1.0;
        let mut n_lo = ((lo - center - half) / period).floor().max(-reach) as i64;
        let mut n_hi = ((hi - center + half) / period).ceil().min(reach) as i64;
        let meets = |n: i64| {
            let c = center + n as f64 * period;
            if half == 0.0 {
                c >= lo && c < hi
            } else {
                c + half > lo && c - half < hi
            }
        };
        while n_lo <= n_hi && !meets(n_lo) {
            n_lo += 1;
        }
        while n_hi >= n_lo && !meets(n_hi) {
            n_hi -= 1;
        }
        if n_lo > n_hi {
            return Err(SimError::NoTooth(lo, hi));
        }
        let weights: Vec<f64> = (n_lo..=n_hi)
            .map(|n| (-bandwidth * (n.abs() as f64) * period).exp())
            .collect();
        let teeth = WeightedIndex::new(&weights).map_err(|_| SimError::NoTooth(lo, hi))?;
        Ok(Self {
            window,
            center,
            period,
            bandwidth,
            first_tooth: n_lo,
            teeth,
            profile,
        })
    }

    /// One true pair delay in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let n = self.first_tooth + self.teeth.sample(rng) as i64;
            let nt = n as f64 * self.period;
            let (x, p_shape) = self.profile.propose(rng);
            let u = x / (2.0 * PI) * self.period;
            let tau = self.center + nt + u;
            if tau < self.window.0 || tau >= self.window.1 {
                continue;
            }
            let p = match self.profile {
                ToothProfile::Delta => 1.0,
                _ => {
                    // Proposal envelope e^{-Δω(|n|τ_opo - τ_opo/2)} bounds e^{-Δω|nτ_opo+u|}.
                    let excess = (nt + u).abs() - nt.abs() + self.period / 2.0;
                    p_shape * (-self.bandwidth * excess).exp()
                }
            };
            if p >= 1.0 || rng.random::<f64>() < p {
                return tau;
            }
        }
    }
}

/// Draws one pair delay (seconds). Builds a sampler per call; use
/// [`PairSampler`] directly for many draws.
pub fn sample_pair_delay<R: Rng + ?Sized>(
    model: &PairModel,
    window: (f64, f64),
    rng: &mut R,
) -> Result<f64, SimError> {
    Ok(PairSampler::new(model, window)?.sample(rng))
}

/// Adds the two-detector timing jitter to a true delay: the sum of two
/// independent double-exponential deviates of FWHM `jitter_fwhm`.
pub fn apply_jitter<R: Rng + ?Sized>(tau_true: f64, jitter_fwhm: f64, rng: &mut R) -> f64 {
    if jitter_fwhm == 0.0 {
        return tau_true;
    }
    let b = jitter_fwhm / (2.0 * LN_2);
    let mut e = || -> f64 { Exp1.sample(rng) };
    tau_true + b * ((e() - e()) + (e() - e()))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Binner {
    origin_ps: f64,
    bin_width_ps: f64,
    n_bins: usize,
    dead_bins: usize,
}

impl Binner {
    fn record(&self, tau_s: f64, counts: &mut [u64], stats: &mut SimStats) {
        let x = ((s_to_ps(tau_s) - self.origin_ps) / self.bin_width_ps).floor();
        if !(x >= 0.0 && x < self.n_bins as f64) {
            stats.dropped_outside += 1;
            return;
        }
        let i = x as usize;
        if i < self.dead_bins {
            stats.dropped_dead += 1;
        } else {
            counts[i] += 1;
            stats.recorded += 1;
        }
    }
}

/// Simulates a histogram, discarding the bookkeeping.
pub fn simulate(model: &PairModel, config: &SimConfig) -> Result<Histogram, SimError> {
    simulate_with_stats(model, config).map(|(h, _)| h)
}

pub fn simulate_with_stats(model: &PairModel, config: &SimConfig) -> Result<(Histogram, SimStats), SimError> {
    config.validate()?;
    let window = config.window_s();
    let sampler = PairSampler::new(model, window)?;
    let binner = Binner {
        origin_ps: config.window_ps.0,
        bin_width_ps: config.bin_width_ps,
        n_bins: config.n_bins(),
        dead_bins: config.dead_bins(),
    };
    let jitter = ps_to_s(config.jitter_fwhm_ps);
    let accidentals = config.accidental_count();

    let pair_jobs = chunks(config.pair_count).map(|(c, n)| (false, c, n));
    let acc_jobs = chunks(accidentals).map(|(c, n)| (true, c, n));
    let jobs: Vec<(bool, u64, u64)> = pair_jobs.chain(acc_jobs).collect();

    let empty = || (vec![0u64; binner.n_bins], SimStats::default());
    let (counts, stats) = jobs
        .into_par_iter()
        .map(|(accidental, chunk, n)| {
            let (mut counts, mut stats) = empty();
            if accidental {
                let mut rng = stream_rng(config.seed, ACCIDENTAL_STREAM | chunk);
                for _ in 0..n {
                    let t = rng.random_range(window.0..window.1);
                    binner.record(t, &mut counts, &mut stats);
                }
                stats.accidentals = n;
            } else {
                let mut rng = stream_rng(config.seed, chunk);
                for _ in 0..n {
                    let t = apply_jitter(sampler.sample(&mut rng), jitter, &mut rng);
                    binner.record(t, &mut counts, &mut stats);
                }
                stats.pairs = n;
            }
            (counts, stats)
        })
        .reduce(empty, |(mut a, sa), (b, sb)| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            (a, sa.merge(sb))
        });

    let mut mask = Vec::new();
    if config.dead_before_ps > 0.0 {
        let start = config.window_ps.0;
        mask.push(
            TimeRange::new(start, start + config.dead_before_ps)
                .map_err(|e| SimError::Config(e.to_string()))?,
        );
    }
    let mut hist = Histogram::new(config.bin_width_ps, config.window_ps.0, counts)
        .map_err(|e| SimError::Config(e.to_string()))?
        .with_mask(mask);
    hist.acquisition = Acquisition {
        duration_s: config.duration_s,
        label: config.label.clone(),
        seed: Some(config.seed),
    };
    Ok((hist, stats))
}

fn chunks(total: u64) -> impl Iterator<Item = (u64, u64)> {
    let n_chunks = total.div_ceil(CHUNK);
    (0..n_chunks).map(move |c| (c, CHUNK.min(total - c * CHUNK)))
}

/// P(T ≤ t) for the sum of two double-exponentials of scale b.
fn pair_jitter_cdf(t: f64, b: f64) -> f64 {
    if b == 0.0 {
        return if t >= 0.0 { 1.0 } else { 0.0 };
    }
    let a = t.abs() / b;
    let tail = 0.5 * (1.0 + a / 2.0) * (-a).exp();
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Exact expected counts per bin for a [`PairModel::Comb`] simulation: the
/// jittered tooth mixture integrated over every bin plus the accidental
/// level; dead bins are zero.
pub fn expected_counts(model: &CombFitParams, config: &SimConfig) -> Result<Vec<f64>, SimError> {
    config.validate()?;
    let pm = PairModel::Comb(*model);
    pm.validate()?;
    let (lo, hi) = config.window_s();
    let teeth = comb_teeth(model, (lo, hi))?;
    let total_w: f64 = teeth.iter().map(|(_, w)| w).sum();
    let b = ps_to_s(config.jitter_fwhm_ps) / (2.0 * LN_2);
    let n_bins = config.n_bins();
    let dead = config.dead_bins();
    let bw = ps_to_s(config.bin_width_ps);
    let acc_per_bin = config.accidental_count() as f64 * bw / (hi - lo);
    let pairs = config.pair_count as f64;
    Ok((0..n_bins)
        .map(|i| {
            if i < dead {
                return 0.0;
            }
            let a = lo + i as f64 * bw;
            let z = a + bw;
            let p: f64 = teeth
                .iter()
                .map(|(c, w)| w * (pair_jitter_cdf(z - c, b) - pair_jitter_cdf(a - c, b)))
                .sum();
            pairs * p / total_w + acc_per_bin
        })
        .collect())
}

/// (centre, weight) of every delta tooth a Comb model places in the window.
fn comb_teeth(model: &CombFitParams, window: (f64, f64)) -> Result<Vec<(f64, f64)>, SimError> {
    let (lo, hi) = window;
    let n_lo = ((lo - model.tau0) / model.tau_opo).ceil() as i64;
    let n_hi = ((hi - model.tau0) / model.tau_opo).ceil() as i64 - 1;
    let teeth: Vec<(f64, f64)> = (n_lo..=n_hi)
        .map(|n| {
            let c = model.tau0 + n as f64 * model.tau_opo;
            (c, (-model.bandwidth * n.abs() as f64 * model.tau_opo).exp())
        })
        .filter(|(c, _)| *c >= lo && *c < hi)
        .collect();
    if teeth.is_empty() {
        Err(SimError::NoTooth(lo, hi))
    } else {
        Ok(teeth)
    }
}

/// Fit-model parameters that reproduce the mean of a [`PairModel::Comb`]
/// simulation in counts per bin: C₁ from the pair count and tooth area, C₂
/// from the accidental level, τ_D from the configured jitter.
pub fn equivalent_fit_params(model: &CombFitParams, config: &SimConfig) -> Result<CombFitParams, SimError> {
    config.validate()?;
    let (lo, hi) = config.window_s();
    let teeth = comb_teeth(model, (lo, hi))?;
    let total_w: f64 = teeth.iter().map(|(_, w)| w).sum();
    let tau_d = ps_to_s(config.jitter_fwhm_ps);
    if tau_d <= 0.0 {
        return Err(SimError::Config("jitter FWHM must be > 0 to map onto the fit model".into()));
    }
    let b = tau_d / (2.0 * LN_2);
    let bw = ps_to_s(config.bin_width_ps);
    let c1 = config.pair_count as f64 * bw / (4.0 * b * total_w);
    let acc_per_bin = config.accidental_count() as f64 * bw / (hi - lo);
    let span = (hi - lo).max((model.tau0 - lo).abs()).max((hi - model.tau0).abs());
    let n_sum = CombFitParams::min_n_sum(model.bandwidth, model.tau_opo)
        .max((span / model.tau_opo).ceil() as u32 + 2);
    Ok(CombFitParams {
        c1,
        c2: if c1 > 0.0 { acc_per_bin / c1 } else { 0.0 },
        tau_d,
        n_sum,
        ..*model
    })
}
