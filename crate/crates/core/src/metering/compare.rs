use std::fmt::Write;

use thiserror::Error;

/// Published per-client figures for large CNNs, shown for orientation only.
pub struct ReferenceRow {
    pub method: &'static str,
    pub tflops: [f64; 2],
    pub gigabytes: [f64; 2],
}

/// Client counts the reference columns were measured at.
pub const REFERENCE_CLIENTS: [usize; 2] = [100, 500];

pub const REFERENCE: [ReferenceRow; 3] = [
    ReferenceRow {
        method: "Large Batch SGD",
        tflops: [29.4, 5.89],
        gigabytes: [13.0, 14.0],
    },
    ReferenceRow {
        method: "Federated Learning",
        tflops: [29.4, 5.89],
        gigabytes: [3.0, 2.4],
    },
    ReferenceRow {
        method: "SplitNN",
        tflops: [0.1548, 0.03],
        gigabytes: [6.0, 1.2],
    },
];

/// Per-client totals of one completed run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub topology: String,
    pub dataset: String,
    pub epochs: usize,
    pub client_flops: u64,
    pub client_bytes_sent: u64,
    pub client_bytes_received: u64,
}

impl RunSummary {
    pub fn client_bytes(&self) -> u64 {
        self.client_bytes_sent + self.client_bytes_received
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompareError {
    #[error("nothing to compare")]
    Empty,
    #[error("runs `{a}` and `{b}` differ in {what}: {va} vs {vb}")]
    Mismatch {
        a: String,
        b: String,
        what: &'static str,
        va: String,
        vb: String,
    },
}

/// Checks that runs share dataset and epoch count.
pub fn check_comparable(runs: &[RunSummary]) -> Result<(), CompareError> {
    let first = runs.first().ok_or(CompareError::Empty)?;
    for r in &runs[1..] {
        if r.dataset != first.dataset {
            return Err(CompareError::Mismatch {
                a: first.name.clone(),
                b: r.name.clone(),
                what: "dataset",
                va: first.dataset.clone(),
                vb: r.dataset.clone(),
            });
        }
        if r.epochs != first.epochs {
            return Err(CompareError::Mismatch {
                a: first.name.clone(),
                b: r.name.clone(),
                what: "epochs",
                va: first.epochs.to_string(),
                vb: r.epochs.to_string(),
            });
        }
    }
    Ok(())
}

fn method_label(run: &RunSummary) -> String {
    match run.method.as_str() {
        "splitnn" => format!("splitnn ({})", run.topology),
        other => other.to_string(),
    }
}

/// Fixed-width table of per-client FLOPs and bytes per run, followed by the
/// published reference figures.
pub fn comparison_table(runs: &[RunSummary]) -> Result<String, CompareError> {
    check_comparable(runs)?;
    let mut out = String::new();
    let first = &runs[0];
    let _ = writeln!(
        out,
        "Per-client resources, dataset {}, {} epoch(s)",
        first.dataset, first.epochs
    );
    let _ = writeln!(
        out,
        "{:<16} {:<28} {:>16} {:>14} {:>14} {:>14}",
        "run", "method", "client FLOPs", "bytes sent", "bytes recv", "bytes total"
    );
    for r in runs {
        let _ = writeln!(
            out,
            "{:<16} {:<28} {:>16} {:>14} {:>14} {:>14}",
            r.name,
            method_label(r),
            r.client_flops,
            r.client_bytes_sent,
            r.client_bytes_received,
            r.client_bytes()
        );
    }
    out.push('\n');
    out.push_str(&reference_block());
    Ok(out)
}

/// Published figures for VGG on CIFAR-10 (FLOPs) and ResNet on CIFAR-100
/// (bandwidth). Not reproduced here.
pub fn reference_block() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Reference (published, full-scale CNNs; not reproduced by this run)");
    let _ = writeln!(
        out,
        "{:<20} {:>14} {:>14} {:>10} {:>10}",
        "method",
        format!("TFlops@{}", REFERENCE_CLIENTS[0]),
        format!("TFlops@{}", REFERENCE_CLIENTS[1]),
        format!("GB@{}", REFERENCE_CLIENTS[0]),
        format!("GB@{}", REFERENCE_CLIENTS[1]),
    );
    for r in &REFERENCE {
        let _ = writeln!(
            out,
            "{:<20} {:>14} {:>14} {:>10} {:>10}",
            r.method, r.tflops[0], r.tflops[1], r.gigabytes[0], r.gigabytes[1]
        );
    }
    out
}
