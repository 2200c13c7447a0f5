//! Command-line front end.
//!
//! Failures print a single line `error kind=<kind> code=<n> msg="<text>"` to
//! stderr and exit with a status that depends on the kind: 2 usage, 3 file
//! access, 4 invalid input, 5 computation.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::etalon::{filtered_comb, mode_weights, JitterKernel, SmoothedComb};
use crate::fit::{self, CurveData, FitError, FitOptions, FitParam, Loss};
use crate::histogram::Histogram;
use crate::io::{self, FitSection, IoError, ParamsFile, Table};
use crate::model::{gamma2_analytic, gamma2_comb_fit, CavityParams, CombFitParams};
use crate::sim::{self, PairModel, SimConfig, SimError};
use crate::units::ps_to_s;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Validation,
    Computation,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Validation => 4,
            ErrorKind::Computation => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Io => "io",
            ErrorKind::Validation => "validation",
            ErrorKind::Computation => "computation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    fn new(kind: ErrorKind, msg: impl ToString) -> Self {
        Self {
            kind,
            msg: msg.to_string(),
        }
    }

    fn usage(msg: impl ToString) -> Self {
        Self::new(ErrorKind::Usage, msg)
    }

    fn invalid(msg: impl ToString) -> Self {
        Self::new(ErrorKind::Validation, msg)
    }

    /// The one-line form written to stderr.
    pub fn line(&self) -> String {
        let msg: String = self
            .msg
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .replace('"', "'");
        format!("error kind={} code={} msg=\"{}\"", self.kind.name(), self.kind.code(), msg)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let kind = match e {
            IoError::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self::new(kind, e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::invalid(e)
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let kind = match e {
            FitError::NoPeriodicity(_) => ErrorKind::Computation,
            _ => ErrorKind::Validation,
        };
        Self::new(kind, e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "biphoton-comb", version, about = "Model, simulate and fit OPO photon-pair coincidence combs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalModel {
    /// Jitter-averaged comb from the [comb] section.
    Comb,
    /// Multimode correlation from the [cavity] section.
    Analytic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimModel {
    Comb,
    Cavity,
    Filtered,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Poisson,
    LeastSquares,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a correlation model on a delay grid.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "comb")]
        model: EvalModel,
        /// t0:t1:step in ps.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a coincidence histogram.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "comb")]
        model: SimModel,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairs: Option<u64>,
        /// Accidentals per true pair.
        #[arg(long)]
        background: Option<f64>,
        /// Per-detector jitter FWHM in ps.
        #[arg(long)]
        jitter: Option<f64>,
        /// Extra dead ranges t0:t1,... in ps, added to the histogram mask.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Etalon mode weights and the filtered correlation.
    Filter {
        #[arg(long)]
        params: PathBuf,
        /// t0:t1:step in ps.
        #[arg(long)]
        grid: String,
        /// Jitter FWHM in ps for the smoothed column.
        #[arg(long)]
        jitter: Option<f64>,
        /// Mode-weight table output.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the comb model to a histogram.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        /// Starting point ([comb] section); estimated from the data otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Excluded ranges t0:t1,... in ps.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long, value_enum, default_value = "poisson")]
        loss: LossArg,
        /// Comma-separated parameters held fixed: c1,c2,bandwidth,tau0,tau_opo,tau_d.
        #[arg(long)]
        freeze: Option<String>,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Residual table output.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Histogram and fitted curve side by side for plotting.
    ExportPlot {
        #[arg(long = "in")]
        input: PathBuf,
        /// File with a [comb] section, e.g. the output of `fit`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `t0:t1:step` (ps) into grid points.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid `{s}` is not t0:t1:step"));
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("grid value `{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    let (t0, t1, step) = (v[0], v[1], v[2]);
    if !(v.iter().all(|x| x.is_finite()) && step > 0.0 && t1 >= t0) {
        return Err(format!("grid `{s}` needs t0 <= t1 and step > 0"));
    }
    let n = ((t1 - t0) / step + 1e-9).floor() as usize + 1;
    if n > 50_000_000 {
        return Err(format!("grid `{s}` has too many points"));
    }
    Ok((0..n).map(|i| t0 + i as f64 * step).collect())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::new(ErrorKind::Io, format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(ErrorKind::Io, e)),
    }
}

fn need<T>(v: Option<T>, section: &str, path: &Path) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::invalid(format!("{}: missing [{section}] section", path.display())))
}

fn cavity_from(file: &ParamsFile, path: &Path) -> Result<CavityParams, CliError> {
    let c = CavityParams::from(&need(file.cavity, "cavity", path)?);
    c.validate().map_err(CliError::invalid)?;
    Ok(c)
}

fn comb_from(file: &ParamsFile, path: &Path) -> Result<CombFitParams, CliError> {
    let c = need(file.comb, "comb", path)?.to_params();
    c.validate().map_err(CliError::invalid)?;
    Ok(c)
}

fn eval(params: &Path, model: EvalModel, grid: &str, out: Option<&Path>) -> Result<(), CliError> {
    let file = ParamsFile::read(params)?;
    let grid = parse_grid(grid).map_err(CliError::usage)?;
    let f: Box<dyn Fn(f64) -> f64> = match model {
        EvalModel::Comb => {
            let p = comb_from(&file, params)?;
            Box::new(move |t| gamma2_comb_fit(&p, t))
        }
        EvalModel::Analytic => {
            let c = cavity_from(&file, params)?;
            Box::new(move |t| gamma2_analytic(&c, t))
        }
    };
    let mut table = Table::new(&["index", "time_ps", "value"]).with_header(
        "model",
        match model {
            EvalModel::Comb => "comb",
            EvalModel::Analytic => "analytic",
        },
    );
    for (i, t) in grid.iter().enumerate() {
        table.rows.push(vec![i as f64, *t, f(ps_to_s(*t))]);
    }
    emit(&table.format(), out)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    params: &Path,
    model: SimModel,
    seed: Option<u64>,
    pairs: Option<u64>,
    background: Option<f64>,
    jitter: Option<f64>,
    mask: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file = ParamsFile::read(params)?;
    let mut config = SimConfig::from(&need(file.sim.clone(), "sim", params)?);
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(p) = pairs {
        config.pair_count = p;
    }
    if let Some(b) = background {
        config.background_ratio = b;
    }
    if let Some(j) = jitter {
        config.jitter_fwhm_ps = j;
    }
    let model = match model {
        SimModel::Comb => PairModel::Comb(comb_from(&file, params)?),
        SimModel::Cavity => PairModel::Cavity(cavity_from(&file, params)?),
        SimModel::Filtered => {
            let cavity = cavity_from(&file, params)?;
            let spec = (&need(file.etalon, "etalon", params)?).into();
            let weights = mode_weights(&spec, cavity.fsr / (2.0 * std::f64::consts::PI), cavity.n_modes)
                .map_err(CliError::invalid)?;
            PairModel::Filtered { cavity, weights }
        }
    };
    let mut hist = sim::simulate(&model, &config)?;
    if let Some(m) = mask {
        let extra = io::parse_mask(m).map_err(CliError::usage)?;
        let mut all = hist.mask().to_vec();
        all.extend(extra);
        let acq = hist.acquisition.clone();
        hist = hist.with_mask(all);
        hist.acquisition = acq;
    }
    emit(&io::format_histogram(&hist), out)
}

fn filter(
    params: &Path,
    grid: &str,
    jitter: Option<f64>,
    weights_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file = ParamsFile::read(params)?;
    let grid = parse_grid(grid).map_err(CliError::usage)?;
    let cavity = cavity_from(&file, params)?;
    let spec = (&need(file.etalon, "etalon", params)?).into();
    let fsr_hz = cavity.fsr / (2.0 * std::f64::consts::PI);
    let weights = mode_weights(&spec, fsr_hz, cavity.n_modes).map_err(CliError::invalid)?;

    if let Some(path) = weights_out {
        let mut t = Table::new(&["m", "offset_mhz", "weight"])
            .with_header("fraction_above_half", weights.fraction_above(0.5));
        for (m, w) in weights.iter() {
            t.rows.push(vec![m as f64, m as f64 * fsr_hz / 1e6, w]);
        }
        t.write(path)?;
    }

    let smooth = match jitter {
        Some(j) if j < 0.0 || !j.is_finite() => return Err(CliError::invalid("jitter must be >= 0")),
        Some(j) => Some(SmoothedComb::new(
            &weights,
            cavity.bandwidth,
            cavity.fsr,
            ps_to_s(j),
            JitterKernel::Single,
        )),
        None => None,
    };
    let mut columns = vec!["index", "time_ps", "filtered"];
    if smooth.is_some() {
        columns.push("smoothed");
    }
    let mut t = Table::new(&columns);
    for (i, tp) in grid.iter().enumerate() {
        let tau = ps_to_s(*tp);
        let mut row = vec![i as f64, *tp, filtered_comb(&weights, cavity.bandwidth, cavity.fsr, tau)];
        if let Some(s) = &smooth {
            row.push(s.eval(tau));
        }
        t.rows.push(row);
    }
    emit(&t.format(), out)
}

fn parse_frozen(s: &str) -> Result<Vec<FitParam>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| FitParam::parse(p.trim()).ok_or_else(|| CliError::usage(format!("unknown parameter `{p}`"))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_cmd(
    input: &Path,
    params: Option<&Path>,
    mask: Option<&str>,
    loss: LossArg,
    freeze: Option<&str>,
    max_iter: usize,
    out: Option<&Path>,
    residuals: Option<&Path>,
) -> Result<(), CliError> {
    let hist = io::read_histogram(input)?;
    let guess = match params {
        Some(p) => Some(comb_from(&ParamsFile::read(p)?, p)?),
        None => None,
    };
    let (loss, loss_name) = match loss {
        LossArg::Poisson => (Loss::PoissonWeighted, "poisson"),
        LossArg::LeastSquares => (Loss::LeastSquares, "least-squares"),
    };
    let opts = FitOptions {
        mask: match mask {
            Some(m) => io::parse_mask(m).map_err(CliError::usage)?,
            None => Vec::new(),
        },
        frozen: match freeze {
            Some(f) => parse_frozen(f)?,
            None => Vec::new(),
        },
        loss,
        max_iter,
        ..FitOptions::default()
    };
    let result = fit::fit(&hist, &opts, guess)?;
    if let Some(path) = residuals {
        let data = CurveData::from_histogram(&hist, &opts.mask);
        let mut t = Table::new(&["time_ps", "count", "model", "weighted_residual"]).with_header("loss", loss_name);
        for (tp, y, m, r) in fit::residual_table(&result.params, &data, &opts) {
            t.rows.push(vec![tp, y, m, r]);
        }
        t.write(path)?;
    }
    let file = ParamsFile {
        comb: Some((&result.params).into()),
        fit: Some(FitSection::from_result(&result, loss_name)),
        ..ParamsFile::default()
    };
    emit(&file.format()?, out)
}

fn export_plot(input: &Path, params: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let hist: Histogram = io::read_histogram(input)?;
    let p = comb_from(&ParamsFile::read(params)?, params)?;
    let mut t = Table::new(&["time_ps", "count", "model"]);
    for (i, c) in hist.counts().iter().enumerate() {
        if hist.is_masked(i) {
            continue;
        }
        let tp = hist.bin_center_ps(i);
        t.rows.push(vec![tp, *c as f64, gamma2_comb_fit(&p, ps_to_s(tp))]);
    }
    emit(&t.format(), out)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Eval {
            params,
            model,
            grid,
            out,
        } => eval(&params, model, &grid, out.as_deref()),
        Command::Simulate {
            params,
            model,
            seed,
            pairs,
            background,
            jitter,
            mask,
            out,
        } => simulate(
            &params,
            model,
            seed,
            pairs,
            background,
            jitter,
            mask.as_deref(),
            out.as_deref(),
        ),
        Command::Filter {
            params,
            grid,
            jitter,
            weights,
            out,
        } => filter(&params, &grid, jitter, weights.as_deref(), out.as_deref()),
        Command::Fit {
            input,
            params,
            mask,
            loss,
            freeze,
            max_iter,
            out,
            residuals,
        } => fit_cmd(
            &input,
            params.as_deref(),
            mask.as_deref(),
            loss,
            freeze.as_deref(),
            max_iter,
            out.as_deref(),
            residuals.as_deref(),
        ),
        Command::ExportPlot { input, params, out } => export_plot(&input, &params, out.as_deref()),
    }
}

/// Runs the CLI and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.kind.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        assert_eq!(parse_grid("0:10:5").unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(parse_grid("59000:59000:1").unwrap(), vec![59000.0]);
        assert!(parse_grid("0:10").is_err());
        assert!(parse_grid("10:0:1").is_err());
        assert!(parse_grid("0:10:0").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let e = run(["biphoton-comb", "eval", "--bogus"]).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Usage);
        assert!(!e.line().contains('\n'));
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = run(["biphoton-comb", "eval", "--params", "/nonexistent/p.toml", "--grid", "0:1:1"]).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Io);
    }
}
