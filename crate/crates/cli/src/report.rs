//! Report structures and their JSON/CSV renderings.
//!
//! Reports hold fractions. CSV output renders them as percentages with three
//! decimals; JSON keeps the raw fractions.

use std::fmt::Write as _;

use protoadapt::metrics::{calibration_bins, coverage_at, CalibrationBin, CoverageReport, PredictionRecord};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::error::CliResult;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub samples: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub aece: f64,
    pub mean_confidence: f64,
    pub bins: Vec<CalibrationBin>,
    pub coverage: Vec<CoverageReport>,
}

impl MethodReport {
    pub fn from_records(
        method: Method,
        records: &[PredictionRecord],
        levels: &[f64],
        bins: usize,
        num_classes: usize,
    ) -> CliResult<Self> {
        let cal = calibration_bins(records, bins)?;
        let coverage = levels
            .iter()
            .map(|&l| coverage_at(records, l, num_classes))
            .collect::<protoadapt::Result<Vec<_>>>()?;
        Ok(Self {
            method,
            samples: records.len(),
            accuracy: cal.overall_accuracy,
            ece: cal.ece,
            aece: cal.aece,
            mean_confidence: cal.overall_mean_confidence,
            bins: cal.bins,
            coverage,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: String,
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    All,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub kind: SplitKind,
    pub shots: Option<usize>,
    pub seed: u64,
    pub support: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub command: String,
    pub data: DataSummary,
    pub split: SplitSummary,
    pub config: RunConfig,
    pub methods: Vec<MethodReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

pub fn pct(fraction: f64) -> String {
    format!("{:.3}", 100.0 * fraction)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_default()
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}

/// Long format: one row per metric, coverage level or bin.
pub fn to_long_csv(report: &Report) -> String {
    let mut out = String::from("method,metric,level,bin,value\n");
    for m in &report.methods {
        let name = m.method.name();
        let mut row = |metric: &str, level: &str, bin: &str, value: String| {
            writeln!(out, "{name},{metric},{level},{bin},{value}").expect("write to string");
        };
        row("accuracy", "", "", pct(m.accuracy));
        row("ece", "", "", pct(m.ece));
        row("aece", "", "", pct(m.aece));
        row("mean_confidence", "", "", pct(m.mean_confidence));
        for c in &m.coverage {
            let level = format!("{}", c.level);
            row("coverage", &level, "", pct(c.coverage));
            row("selected", &level, "", c.selected.to_string());
            row("selected_accuracy", &level, "", opt_pct(c.selected_accuracy));
            row("reliable", &level, "", u8::from(c.reliable).to_string());
            row("classwise_coverage", &level, "", pct(c.classwise_coverage));
        }
        for (k, b) in m.bins.iter().enumerate() {
            let bin = k.to_string();
            row("bin_count", "", &bin, b.count.to_string());
            row("bin_confidence", "", &bin, opt_pct(b.mean_confidence));
            row("bin_accuracy", "", &bin, opt_pct(b.accuracy));
        }
    }
    out
}

/// Side-by-side format: one row per method.
pub fn to_wide_csv(report: &Report) -> String {
    let mut out = String::from("method,accuracy,ece,aece");
    for level in &report.config.levels {
        write!(out, ",coverage@{level},reliable@{level}").expect("write to string");
    }
    out.push('\n');
    for m in &report.methods {
        write!(out, "{},{},{},{}", m.method, pct(m.accuracy), pct(m.ece), pct(m.aece)).expect("write to string");
        for c in &m.coverage {
            write!(out, ",{},{}", pct(c.coverage), u8::from(c.reliable)).expect("write to string");
        }
        out.push('\n');
    }
    out
}
