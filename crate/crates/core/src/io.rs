//! Text formats: the histogram table and the parameter document.
//!
//! Histogram files are comma-separated with `#`-prefixed `key = value`
//! header lines. Times are in picoseconds, durations in seconds. The
//! canonical writer output reads back to an identical file.
//!
//! Parameter files are TOML. Frequencies are in MHz (ordinary, not angular:
//! `bandwidth_mhz = 7.8` means Δω/2π = 7.8 MHz), times in ps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::etalon::EtalonSpec;
use crate::fit::FitResult;
use crate::histogram::{Acquisition, Histogram, HistogramError, TimeRange};
use crate::model::{CavityParams, CombFitParams};
use crate::sim::SimConfig;
use crate::units::{angular_to_mhz, mhz_to_angular, ps_to_s, s_to_ps};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: `{key}` has the wrong unit, expected `{expected}`")]
    UnitMismatch { line: usize, key: String, expected: String },
    #[error("histogram file has no bins")]
    NoBins,
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("parameter file: {0}")]
    Params(String),
}

const HEADER_TITLE: &str = "# biphoton-comb histogram; times in ps, duration in s";
const COLUMNS: &str = "bin_index,time_ps,count";

/// Header keys and the unit suffix each must carry.
const HEADER_KEYS: [(&str, &str); 6] = [
    ("bin_width", "ps"),
    ("origin", "ps"),
    ("duration", "s"),
    ("mask", "ps"),
    ("label", ""),
    ("seed", ""),
];

fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Bin-centre time as written in the `time_ps` column.
pub fn format_time_ps(t: f64) -> String {
    format!("{t:.4}")
}

fn format_mask(mask: &[TimeRange]) -> String {
    mask.iter()
        .map(|r| format!("{}:{}", r.start_ps, r.end_ps))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `a:b,c:d` (ps) into ranges.
pub fn parse_mask(s: &str) -> Result<Vec<TimeRange>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| format!("mask range `{part}` is not start:end"))?;
            let a: f64 = a.trim().parse().map_err(|_| format!("bad mask start `{a}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad mask end `{b}`"))?;
            TimeRange::new(a, b).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn format_histogram(hist: &Histogram) -> String {
    let mut s = String::new();
    let label = hist.acquisition.label.replace(['\n', '\r'], " ");
    let _ = writeln!(s, "{HEADER_TITLE}");
    let _ = writeln!(s, "# bin_width_ps = {}", hist.bin_width_ps());
    let _ = writeln!(s, "# origin_ps = {}", hist.origin_ps());
    if let Some(d) = hist.acquisition.duration_s {
        let _ = writeln!(s, "# duration_s = {d}");
    }
    if !label.trim().is_empty() {
        let _ = writeln!(s, "# label = {}", label.trim());
    }
    if let Some(seed) = hist.acquisition.seed {
        let _ = writeln!(s, "# seed = {seed}");
    }
    if !hist.mask().is_empty() {
        let _ = writeln!(s, "# mask_ps = {}", format_mask(hist.mask()));
    }
    let _ = writeln!(s, "{COLUMNS}");
    for (i, c) in hist.counts().iter().enumerate() {
        let _ = writeln!(s, "{i},{},{c}", format_time_ps(hist.bin_center_ps(i)));
    }
    s
}

pub fn write_histogram(hist: &Histogram, path: &Path) -> Result<(), IoError> {
    write_file(path, &format_histogram(hist))
}

pub fn read_histogram(path: &Path) -> Result<Histogram, IoError> {
    parse_histogram(&read_file(path)?)
}

fn header_key(line: usize, raw: &str) -> Result<&'static str, IoError> {
    for (base, unit) in HEADER_KEYS {
        let expected = if unit.is_empty() {
            base.to_string()
        } else {
            format!("{base}_{unit}")
        };
        if raw == expected {
            return Ok(base);
        }
        if !unit.is_empty() && raw.starts_with(&format!("{base}_")) {
            return Err(IoError::UnitMismatch {
                line,
                key: raw.to_string(),
                expected,
            });
        }
    }
    Err(IoError::Parse {
        line,
        msg: format!("unknown header key `{raw}`"),
    })
}

pub fn parse_histogram(text: &str) -> Result<Histogram, IoError> {
    let mut bin_width = None;
    let mut origin = None;
    let mut acq = Acquisition::default();
    let mut mask = Vec::new();
    let mut seen_columns = false;
    let mut counts: Vec<u64> = Vec::new();
    let mut last_index: Option<u64> = None;

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let bad = |msg: String| IoError::Parse { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else {
                continue;
            };
            if seen_columns {
                return Err(bad("header line after the column row".into()));
            }
            let value = value.trim();
            let number = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("`{v}` is not a number")));
            match header_key(line, key.trim())? {
                "bin_width" => bin_width = Some(number(value)?),
                "origin" => origin = Some(number(value)?),
                "duration" => acq.duration_s = Some(number(value)?),
                "label" => acq.label = value.to_string(),
                "seed" => acq.seed = Some(value.parse().map_err(|_| bad(format!("bad seed `{value}`")))?),
                "mask" => mask = parse_mask(value).map_err(bad)?,
                _ => unreachable!(),
            }
            continue;
        }
        if !seen_columns {
            if trimmed != COLUMNS {
                return Err(bad(format!("expected column row `{COLUMNS}`")));
            }
            seen_columns = true;
            continue;
        }
        let (Some(bw), Some(o)) = (bin_width, origin) else {
            return Err(bad("bin_width_ps and origin_ps must precede the data".into()));
        };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let index: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bin_index `{}` is not a non-negative integer", fields[0])))?;
        if last_index.is_some_and(|l| index <= l) {
            return Err(bad(format!("bin_index {index} is not increasing")));
        }
        let time: f64 = fields[1]
            .parse()
            .map_err(|_| bad(format!("time_ps `{}` is not a number", fields[1])))?;
        let expected = o + (index as f64 + 0.5) * bw;
        if (time - expected).abs() > 5.1e-5 + 1e-12 * expected.abs() {
            return Err(bad(format!("time_ps {time} does not match bin centre {expected}")));
        }
        if fields[2].starts_with('-') {
            return Err(bad(format!("negative count {}", fields[2])));
        }
        let count: u64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("count `{}` is not a non-negative integer", fields[2])))?;
        if index as usize >= counts.len() {
            counts.resize(index as usize, 0);
        }
        counts.push(count);
        last_index = Some(index);
    }
    let (Some(bw), Some(o)) = (bin_width, origin) else {
        return Err(IoError::Parse {
            line: text.lines().count().max(1),
            msg: "missing bin_width_ps or origin_ps header".into(),
        });
    };
    if counts.is_empty() {
        return Err(IoError::NoBins);
    }
    let mut h = Histogram::new(bw, o, counts)?.with_mask(mask);
    h.acquisition = acq;
    Ok(h)
}

/// A numeric table with the same header conventions as histogram files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            header: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(mut self, key: &str, value: impl ToString) -> Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, &self.format())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub gamma1_mhz: f64,
    pub gamma2_mhz: f64,
    pub epsilon_mhz: f64,
    pub bandwidth_mhz: f64,
    pub fsr_mhz: f64,
    pub n_modes: u32,
    pub finesse_ratio: f64,
}

impl From<&CavitySection> for CavityParams {
    fn from(s: &CavitySection) -> Self {
        CavityParams {
            gamma1: mhz_to_angular(s.gamma1_mhz),
            gamma2: mhz_to_angular(s.gamma2_mhz),
            epsilon: mhz_to_angular(s.epsilon_mhz),
            bandwidth: mhz_to_angular(s.bandwidth_mhz),
            fsr: mhz_to_angular(s.fsr_mhz),
            n_modes: s.n_modes,
            finesse_ratio: s.finesse_ratio,
        }
    }
}

impl From<&CavityParams> for CavitySection {
    fn from(p: &CavityParams) -> Self {
        CavitySection {
            gamma1_mhz: angular_to_mhz(p.gamma1),
            gamma2_mhz: angular_to_mhz(p.gamma2),
            epsilon_mhz: angular_to_mhz(p.epsilon),
            bandwidth_mhz: angular_to_mhz(p.bandwidth),
            fsr_mhz: angular_to_mhz(p.fsr),
            n_modes: p.n_modes,
            finesse_ratio: p.finesse_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSection {
    pub c1: f64,
    pub c2: f64,
    pub bandwidth_mhz: f64,
    pub tau0_ps: f64,
    pub tau_opo_ps: f64,
    pub tau_d_ps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sum: Option<u32>,
}

impl CombSection {
    /// Converts to SI; a missing `n_sum` takes the envelope tail criterion.
    pub fn to_params(&self) -> CombFitParams {
        let bandwidth = mhz_to_angular(self.bandwidth_mhz);
        let tau_opo = ps_to_s(self.tau_opo_ps);
        CombFitParams {
            c1: self.c1,
            c2: self.c2,
            bandwidth,
            tau0: ps_to_s(self.tau0_ps),
            tau_opo,
            tau_d: ps_to_s(self.tau_d_ps),
            n_sum: self
                .n_sum
                .unwrap_or_else(|| CombFitParams::min_n_sum(bandwidth, tau_opo)),
        }
    }
}

impl From<&CombFitParams> for CombSection {
    fn from(p: &CombFitParams) -> Self {
        CombSection {
            c1: p.c1,
            c2: p.c2,
            bandwidth_mhz: angular_to_mhz(p.bandwidth),
            tau0_ps: s_to_ps(p.tau0),
            tau_opo_ps: s_to_ps(p.tau_opo),
            tau_d_ps: s_to_ps(p.tau_d),
            n_sum: Some(p.n_sum),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtalonSection {
    pub fsr_mhz: f64,
    pub fwhm_mhz: f64,
    #[serde(default)]
    pub detuning_mhz: f64,
}

impl From<&EtalonSection> for EtalonSpec {
    fn from(s: &EtalonSection) -> Self {
        EtalonSpec {
            fsr: s.fsr_mhz * 1e6,
            fwhm: s.fwhm_mhz * 1e6,
            detuning: s.detuning_mhz * 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub pairs: u64,
    #[serde(default)]
    pub background_ratio: f64,
    pub window_ps: [f64; 2],
    #[serde(default)]
    pub dead_before_ps: f64,
    pub jitter_fwhm_ps: f64,
    pub bin_width_ps: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl From<&SimSection> for SimConfig {
    fn from(s: &SimSection) -> Self {
        SimConfig {
            pair_count: s.pairs,
            background_ratio: s.background_ratio,
            window_ps: (s.window_ps[0], s.window_ps[1]),
            dead_before_ps: s.dead_before_ps,
            jitter_fwhm_ps: s.jitter_fwhm_ps,
            bin_width_ps: s.bin_width_ps,
            seed: s.seed,
            duration_s: s.duration_s,
            label: s.label.clone(),
        }
    }
}

/// Standard errors in file units; absent for frozen or undetermined ones.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StderrSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0_ps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_opo_ps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_d_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub initial_objective: f64,
    pub visible_bins: usize,
    pub loss: String,
    #[serde(default)]
    pub stderr: StderrSection,
}

impl FitSection {
    pub fn from_result(r: &FitResult, loss: &str) -> Self {
        let e = r.stderr;
        FitSection {
            converged: r.converged,
            iterations: r.iterations,
            objective: r.objective,
            initial_objective: r.initial_objective,
            visible_bins: r.visible_bins,
            loss: loss.to_string(),
            stderr: StderrSection {
                c1: e[0],
                c2: e[1],
                bandwidth_mhz: e[2].map(angular_to_mhz),
                tau0_ps: e[3].map(s_to_ps),
                tau_opo_ps: e[4].map(s_to_ps),
                tau_d_ps: e[5].map(s_to_ps),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etalon: Option<EtalonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

impl ParamsFile {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Params(e.to_string().replace('\n', " ")))
    }

    pub fn format(&self) -> Result<String, IoError> {
        toml::to_string(self).map_err(|e| IoError::Params(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, &self.format()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Histogram {
        let mut h = Histogram::new(4.88, -100.0, vec![0, 3, 17, 2, 0])
            .unwrap()
            .with_mask(vec![TimeRange::new(-100.0, -90.0).unwrap()]);
        h.acquisition = Acquisition {
            duration_s: Some(70.0),
            label: "reference run".into(),
            seed: Some(42),
        };
        h
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = format_histogram(&sample());
        let back = parse_histogram(&text).unwrap();
        assert_eq!(back, sample());
        assert_eq!(format_histogram(&back), text);
    }

    #[test]
    fn negative_count_reports_line() {
        let text = format_histogram(&sample()).replace("2,-87.8000,17", "2,-87.8000,-1");
        match parse_histogram(&text) {
            Err(IoError::Parse { line, msg }) => {
                assert_eq!(line, 11);
                assert!(msg.contains("negative"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_increasing_index_rejected() {
        let text = format_histogram(&sample()).replace("3,-82.9200,2", "1,-82.9200,2");
        assert!(matches!(parse_histogram(&text), Err(IoError::Parse { line: 12, .. })));
    }

    #[test]
    fn header_without_bins_rejected() {
        let text = "# bin_width_ps = 4.88\n# origin_ps = 0\nbin_index,time_ps,count\n";
        assert!(matches!(parse_histogram(text), Err(IoError::NoBins)));
    }

    #[test]
    fn wrong_unit_suffix_rejected() {
        let text = "# bin_width_ns = 0.00488\n# origin_ps = 0\nbin_index,time_ps,count\n0,0.0024,1\n";
        assert!(matches!(
            parse_histogram(text),
            Err(IoError::UnitMismatch { line: 1, .. })
        ));
    }

    #[test]
    fn time_column_must_match_axis() {
        let text = "# bin_width_ps = 2\n# origin_ps = 0\nbin_index,time_ps,count\n0,1.5000,1\n";
        assert!(matches!(parse_histogram(text), Err(IoError::Parse { line: 4, .. })));
    }

    #[test]
    fn params_reject_unknown_keys() {
        let ok = "[comb]\nc1 = 93.0\nc2 = 0.0\nbandwidth_mhz = 7.8\ntau0_ps = 59000.0\ntau_opo_ps = 1630.0\ntau_d_ps = 220.0\n";
        let p = ParamsFile::parse(ok).unwrap();
        let comb = p.comb.unwrap().to_params();
        assert_eq!(comb.tau_opo, 1.63e-9);
        assert!(ParamsFile::parse(&format!("{ok}colour = 1\n")).is_err());
        assert!(ParamsFile::parse("[comb]\nc1 = 1.0\n").is_err());
        assert!(ParamsFile::parse("[other]\n").is_err());
    }

    #[test]
    fn params_round_trip() {
        let p = ParamsFile {
            etalon: Some(EtalonSection {
                fsr_mhz: 13_000.0,
                fwhm_mhz: 1_000.0,
                detuning_mhz: 0.0,
            }),
            comb: Some(CombSection {
                c1: 93.0,
                c2: 0.0,
                bandwidth_mhz: 7.8,
                tau0_ps: 59_000.0,
                tau_opo_ps: 1_630.0,
                tau_d_ps: 220.0,
                n_sum: Some(30),
            }),
            ..ParamsFile::default()
        };
        assert_eq!(ParamsFile::parse(&p.format().unwrap()).unwrap(), p);
    }
}
