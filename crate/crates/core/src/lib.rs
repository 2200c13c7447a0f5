//! Analytic model, Monte Carlo simulation and fitting of the time-correlation
//! comb of multimode photon pairs emitted by a degenerate optical parametric
//! oscillator far below threshold.
//!
//! The crate is organised around the measured quantity, a coincidence
//! histogram of detection-time differences:
//!
//! - [`model`]: cavity gain functions, the multimode intensity correlation,
//!   the detector jitter kernel and the jitter-averaged comb used for fitting.
//! - [`etalon`]: Fabry-Pérot transmission, per-mode weights and the filtered
//!   correlation function.
//! - [`sim`]: seedable Monte Carlo generation of binned coincidence histograms.
//! - [`fit`]: bounded damped least-squares recovery of the comb parameters.
//! - [`io`] and [`cli`]: text formats and the command-line front end.
//!
//! Public interfaces take times in picoseconds and frequencies in MHz at the
//! file boundary; everything inside the library is SI (seconds, rad/s).

pub mod cli;
pub mod etalon;
pub mod fit;
pub mod histogram;
pub mod io;
pub mod model;
pub mod sim;
pub mod units;

pub use etalon::{EtalonSpec, ModeWeights};
pub use fit::{FitOptions, FitResult, Loss};
pub use histogram::{Acquisition, Histogram, TimeRange};
pub use model::{CavityParams, CombFitParams};
pub use sim::{PairModel, SimConfig};
