//! Post-run analysis: metrics files, accuracy-vs-client-FLOPs curves and
//! method comparison tables.

mod metrics;

use std::fmt::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metering::{check_comparable, comparison_table, CompareError, RunSummary};

pub use metrics::{
    read_metrics, write_metrics, MetricsRow, RoleTotals, RowKind, RunInfo, CURVES, METRICS,
    METRICS_HEADER, RUN_INFO, SUMMARY, WEIGHTS,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("runs cannot be compared: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Compare(#[from] CompareError),
}

/// A completed run as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub rows: Vec<MetricsRow>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        Ok(Self {
            dir: dir.to_path_buf(),
            info: RunInfo::read(dir)?,
            rows: read_metrics(&dir.join(METRICS))?,
        })
    }

    /// Totals at the last row.
    pub fn summary(&self) -> RunSummary {
        let last = self.rows.last();
        let client = last.and_then(|r| {
            r.roles
                .iter()
                .filter(|t| is_data_client(&t.role))
                .max_by_key(|t| (t.bytes_sent + t.bytes_received, t.flops))
        });
        RunSummary {
            name: self.info.name.clone(),
            method: self.info.method.clone(),
            topology: self.info.topology.clone(),
            dataset: self.info.dataset.clone(),
            epochs: self.info.epochs,
            client_flops: last.map_or(0, |r| r.client_flops),
            client_bytes_sent: client.map_or(0, |c| c.bytes_sent),
            client_bytes_received: client.map_or(0, |c| c.bytes_received),
        }
    }
}

pub fn is_data_client(role: &str) -> bool {
    role.strip_prefix("client")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Every run directory directly below `dir`, sorted by name.
pub fn discover_runs(dir: &Path) -> Result<Vec<RunRecord>, ReportError> {
    let entries = std::fs::read_dir(dir).map_err(|e| ReportError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(RUN_INFO).is_file() && p.join(METRICS).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| RunRecord::load(d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub run: String,
    pub method: String,
    pub epoch: usize,
    /// Cumulative FLOPs of the busiest data client.
    pub client_flops: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub run: String,
    pub method: String,
    pub points: Vec<CurvePoint>,
}

fn method_label(info: &RunInfo) -> String {
    if info.method == "splitnn" {
        format!("splitnn-{}", info.topology)
    } else {
        info.method.clone()
    }
}

fn check_same_setup(runs: &[RunRecord]) -> Result<(), ReportError> {
    let Some(first) = runs.first() else {
        return Err(ReportError::Incompatible("no runs".into()));
    };
    for r in &runs[1..] {
        if r.info.dataset != first.info.dataset {
            return Err(ReportError::Incompatible(format!(
                "`{}` trains on {} but `{}` on {}",
                first.info.name, first.info.dataset, r.info.name, r.info.dataset
            )));
        }
        if r.info.network != first.info.network {
            return Err(ReportError::Incompatible(format!(
                "`{}` and `{}` train different networks",
                first.info.name, r.info.name
            )));
        }
    }
    Ok(())
}

/// One accuracy-vs-client-FLOPs curve per run, one point per eval row.
pub fn curves(runs: &[RunRecord]) -> Result<Vec<Curve>, ReportError> {
    check_same_setup(runs)?;
    runs.iter()
        .map(|r| {
            let points: Vec<CurvePoint> = r
                .rows
                .iter()
                .filter(|row| row.kind == RowKind::Eval)
                .map(|row| CurvePoint {
                    run: r.info.name.clone(),
                    method: method_label(&r.info),
                    epoch: row.epoch,
                    client_flops: row.client_flops,
                    accuracy: row.accuracy.first().copied().unwrap_or(0.0),
                })
                .collect();
            if points.windows(2).any(|w| w[1].client_flops <= w[0].client_flops) {
                return Err(ReportError::Incompatible(format!(
                    "client FLOPs in `{}` do not increase from epoch to epoch",
                    r.info.name
                )));
            }
            Ok(Curve {
                run: r.info.name.clone(),
                method: method_label(&r.info),
                points,
            })
        })
        .collect()
}

pub const CURVES_HEADER: [&str; 5] = ["run", "method", "epoch", "client_flops", "accuracy"];

pub fn write_curves(path: &Path, curves: &[Curve]) -> Result<(), ReportError> {
    let io = |e: csv::Error| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CURVES_HEADER).map_err(io)?;
    for p in curves.iter().flat_map(|c| &c.points) {
        w.write_record([
            p.run.clone(),
            p.method.clone(),
            p.epoch.to_string(),
            p.client_flops.to_string(),
            p.accuracy.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>, ReportError> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| ReportError::Io {
        path: name.clone(),
        reason: e.to_string(),
    })?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| ReportError::Io {
                path: name.clone(),
                reason: e.to_string(),
            })?;
            let bad = |reason: String| ReportError::Format {
                path: name.clone(),
                line: rec.position().map_or(0, |p| p.line()),
                reason,
            };
            if rec.len() != CURVES_HEADER.len() {
                return Err(bad(format!("expected {} cells", CURVES_HEADER.len())));
            }
            Ok(CurvePoint {
                run: rec[0].to_string(),
                method: rec[1].to_string(),
                epoch: rec[2].parse().map_err(|_| bad("bad epoch".into()))?,
                client_flops: rec[3].parse().map_err(|_| bad("bad client_flops".into()))?,
                accuracy: rec[4].parse().map_err(|_| bad("bad accuracy".into()))?,
            })
        })
        .collect()
}

/// Table of per-client totals for each run, with the published reference
/// figures appended.
pub fn summary_table(runs: &[RunRecord]) -> Result<String, ReportError> {
    let summaries: Vec<RunSummary> = runs.iter().map(RunRecord::summary).collect();
    Ok(comparison_table(&summaries)?)
}

/// Writes curves.csv and summary.txt for every run under `dir`.
pub fn compare_dir(dir: &Path) -> Result<String, ReportError> {
    let runs = discover_runs(dir)?;
    let summaries: Vec<RunSummary> = runs.iter().map(RunRecord::summary).collect();
    check_comparable(&summaries)?;
    let curves = curves(&runs)?;
    write_curves(&dir.join(CURVES), &curves)?;
    let mut text = summary_table(&runs)?;
    let _ = writeln!(text, "\nCurves: {} run(s) written to {CURVES}", curves.len());
    std::fs::write(dir.join(SUMMARY), &text).map_err(|e| ReportError::Io {
        path: dir.join(SUMMARY).display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(text)
}
