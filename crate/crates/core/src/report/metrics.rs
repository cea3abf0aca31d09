use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::metering::ResourceLedger;

pub const METRICS_HEADER: [&str; 13] = [
    "row",
    "kind",
    "epoch",
    "step",
    "method",
    "topology",
    "loss",
    "accuracy",
    "client_flops",
    "client_bytes",
    "server_flops",
    "server_bytes",
    "roles",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Train,
    Eval,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::Train => "train",
            RowKind::Eval => "eval",
        })
    }
}

/// Cumulative counters of one role at a row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTotals {
    pub role: String,
    pub flops: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl RoleTotals {
    pub fn of(ledger: &ResourceLedger) -> Self {
        Self {
            role: ledger.role.clone(),
            flops: ledger.flops(),
            bytes_sent: ledger.bytes_sent,
            bytes_received: ledger.bytes_received,
        }
    }
}

/// One line of metrics.csv. Train rows carry the step loss(es); eval rows
/// carry the epoch's evaluation loss(es) and accuracy. Resource columns are
/// cumulative since the start of the run. `client_*` is the busiest data
/// client; `server_*` sums all server roles.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub row: usize,
    pub kind: RowKind,
    pub epoch: usize,
    pub step: u32,
    pub method: String,
    pub topology: String,
    /// One per task head.
    pub losses: Vec<f64>,
    /// Empty on train rows.
    pub accuracy: Vec<f64>,
    pub client_flops: u64,
    pub client_bytes: u64,
    pub server_flops: u64,
    pub server_bytes: u64,
    pub roles: Vec<RoleTotals>,
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn split_floats(cell: &str) -> Result<Vec<f64>, String> {
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    cell.split(';')
        .map(|v| v.parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        let roles = self
            .roles
            .iter()
            .map(|r| format!("{}:{}:{}:{}", r.role, r.flops, r.bytes_sent, r.bytes_received))
            .collect::<Vec<_>>()
            .join("|");
        vec![
            self.row.to_string(),
            self.kind.to_string(),
            self.epoch.to_string(),
            self.step.to_string(),
            self.method.clone(),
            self.topology.clone(),
            join(&self.losses),
            join(&self.accuracy),
            self.client_flops.to_string(),
            self.client_bytes.to_string(),
            self.server_flops.to_string(),
            self.server_bytes.to_string(),
            roles,
        ]
    }

    fn parse(record: &csv::StringRecord) -> Result<Self, String> {
        if record.len() != METRICS_HEADER.len() {
            return Err(format!("expected {} cells, found {}", METRICS_HEADER.len(), record.len()));
        }
        let int = |i: usize| -> Result<u64, String> {
            record[i]
                .parse::<u64>()
                .map_err(|_| format!("column {}: `{}` is not an integer", METRICS_HEADER[i], &record[i]))
        };
        let kind = match &record[1] {
            "train" => RowKind::Train,
            "eval" => RowKind::Eval,
            other => return Err(format!("unknown row kind `{other}`")),
        };
        let roles = if record[12].is_empty() {
            Vec::new()
        } else {
            record[12]
                .split('|')
                .map(|r| {
                    let parts: Vec<&str> = r.split(':').collect();
                    let num = |s: &str| s.parse::<u64>().map_err(|_| format!("bad role entry `{r}`"));
                    match parts.as_slice() {
                        [role, flops, sent, recv] => Ok(RoleTotals {
                            role: role.to_string(),
                            flops: num(flops)?,
                            bytes_sent: num(sent)?,
                            bytes_received: num(recv)?,
                        }),
                        _ => Err(format!("bad role entry `{r}`")),
                    }
                })
                .collect::<Result<_, _>>()?
        };
        Ok(Self {
            row: int(0)? as usize,
            kind,
            epoch: int(2)? as usize,
            step: int(3)? as u32,
            method: record[4].to_string(),
            topology: record[5].to_string(),
            losses: split_floats(&record[6])?,
            accuracy: split_floats(&record[7])?,
            client_flops: int(8)?,
            client_bytes: int(9)?,
            server_flops: int(10)?,
            server_bytes: int(11)?,
            roles,
        })
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), ReportError> {
    let io = |e: csv::Error| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(METRICS_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.record()).map_err(io)?;
    }
    w.flush().map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| ReportError::Io {
        path: name.clone(),
        reason: e.to_string(),
    })?;
    let header = r.headers().map_err(|e| ReportError::Io {
        path: name.clone(),
        reason: e.to_string(),
    })?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(ReportError::Format {
            path: name,
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| ReportError::Io {
                path: name.clone(),
                reason: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            MetricsRow::parse(&rec).map_err(|reason| ReportError::Format {
                path: name.clone(),
                line,
                reason,
            })
        })
        .collect()
}

/// What a run trained, stored next to its metrics so runs can be compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub name: String,
    pub method: String,
    pub topology: String,
    pub dataset: String,
    pub network: String,
    pub epochs: usize,
    pub clients: usize,
    pub seed: u64,
}

pub const RUN_INFO: &str = "run.info";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.txt";
pub const WEIGHTS: &str = "weights.spln";
pub const CURVES: &str = "curves.csv";

impl RunInfo {
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        let path = dir.join(RUN_INFO);
        let text = toml::to_string(self).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(&path, text).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn read(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join(RUN_INFO);
        let text = std::fs::read_to_string(&path).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ReportError::Format {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }
}
