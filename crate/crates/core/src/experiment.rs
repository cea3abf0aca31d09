//! Run lifecycle: load data, partition it, train, and write artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Method, Resolved};
use crate::data::{
    load_cifar_bin, load_csv, load_mnist_idx, partition_horizontal, partition_vertical, synthetic,
    DataError, Dataset, HorizontalStrategy, Shard, SyntheticSpec,
};
use crate::engine::{
    EngineError, EvalReport, FederatedSession, LargeBatchSession, SplitSession, TrainStepReport,
    Trainer,
};
use crate::metering::{check_comparable, comparison_table, ResourceLedger, RunSummary};
use crate::protocol::encode;
use crate::report::{
    discover_runs, is_data_client, write_metrics, MetricsRow, ReportError, RoleTotals, RowKind,
    RunInfo, RunRecord, METRICS, SUMMARY, WEIGHTS,
};
use crate::topology::RoleKind;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error("training: {0}")]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Loads the configured dataset; relative paths resolve against `base_dir`.
pub fn load_dataset(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Dataset, RunError> {
    let d = &cfg.dataset;
    let at = |p: &PathBuf| base_dir.join(p);
    let data = if let Some(s) = &d.synthetic {
        let mut spec = SyntheticSpec::new(s.n, s.dims, s.classes, s.seed);
        spec.extra_tasks = s.extra_tasks;
        if let Some(sep) = s.separation {
            spec.separation = sep;
        }
        synthetic(&spec)?
    } else if let Some(p) = &d.csv {
        load_csv(&at(p))?
    } else if let Some(p) = &d.cifar {
        load_cifar_bin(&at(p))?
    } else {
        let (Some(images), Some(labels)) = (&d.mnist_images, &d.mnist_labels) else {
            return Err(ConfigError::Invalid(vec!["dataset: no source given".into()]).into());
        };
        load_mnist_idx(&at(images), &at(labels))?
    };
    Ok(if d.flatten { data.flattened() } else { data })
}

pub fn partition(cfg: &ExperimentConfig, resolved: &Resolved, data: &Dataset) -> Result<Vec<Shard>, RunError> {
    let p = &cfg.partition;
    if resolved.vertical {
        return Ok(partition_vertical(data, &p.feature_widths)?);
    }
    let strategy = match p.strategy.as_str() {
        "dirichlet" => HorizontalStrategy::Dirichlet {
            alpha: p.alpha.unwrap_or(1.0),
        },
        _ => HorizontalStrategy::Equal,
    };
    Ok(partition_horizontal(data, p.num_clients, strategy, cfg.seed)?)
}

pub fn build_trainer(cfg: &ExperimentConfig, resolved: &Resolved, shards: Vec<Shard>) -> Result<Trainer, RunError> {
    let input = &cfg.network.input_shape;
    let t = resolved.transport.clone();
    Ok(match resolved.method {
        Method::Splitnn => Trainer::Split(SplitSession::new(
            resolved.plan.clone().expect("resolved split plan"),
            shards,
            resolved.train,
            t,
        )?),
        Method::Federated => Trainer::Federated(FederatedSession::new(
            &resolved.network,
            input,
            shards,
            resolved.train,
            t,
        )?),
        Method::Largebatch => Trainer::LargeBatch(LargeBatchSession::new(
            &resolved.network,
            input,
            shards,
            resolved.train,
            t,
        )?),
    })
}

fn network_signature(cfg: &ExperimentConfig) -> String {
    let n = &cfg.network;
    let mut parts = vec![format!("input {:?}", n.input_shape)];
    parts.extend(n.branches.iter().map(|b| format!("branch[{}]", b.layers.join(", "))));
    if !n.layers.is_empty() {
        parts.push(format!("[{}]", n.layers.join(", ")));
    }
    parts.extend(n.heads.iter().map(|h| format!("head[{}]", h.layers.join(", "))));
    parts.join(" ")
}

/// Builds metrics rows from step reports, tracking cumulative counters.
pub struct MetricsRecorder {
    method: String,
    topology: String,
    totals: Vec<ResourceLedger>,
    servers: Vec<bool>,
    rows: Vec<MetricsRow>,
}

impl MetricsRecorder {
    pub fn new(trainer: &Trainer, method: &str, topology: &str) -> Self {
        let fabric = trainer.fabric();
        let servers = match trainer {
            Trainer::Split(s) => s.plan().roles.iter().map(|r| r.kind == RoleKind::Server).collect(),
            _ => fabric.roles().iter().map(|r| r == "server").collect(),
        };
        Self {
            method: method.to_string(),
            topology: topology.to_string(),
            totals: fabric.roles().iter().map(ResourceLedger::new).collect(),
            servers,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, kind: RowKind, epoch: usize, step: u32, losses: Vec<f64>, accuracy: Vec<f64>) {
        let clients = self.totals.iter().filter(|l| is_data_client(&l.role));
        let client_flops = clients.clone().map(ResourceLedger::flops).max().unwrap_or(0);
        let client_bytes = clients.map(ResourceLedger::bytes).max().unwrap_or(0);
        let servers = self.totals.iter().zip(&self.servers).filter(|(_, s)| **s);
        self.rows.push(MetricsRow {
            row: self.rows.len(),
            kind,
            epoch,
            step,
            method: self.method.clone(),
            topology: self.topology.clone(),
            losses,
            accuracy,
            client_flops,
            client_bytes,
            server_flops: servers.clone().map(|(l, _)| l.flops()).sum(),
            server_bytes: servers.map(|(l, _)| l.bytes()).sum(),
            roles: self.totals.iter().map(RoleTotals::of).collect(),
        });
    }

    pub fn step(&mut self, report: &TrainStepReport) {
        for (acc, d) in self.totals.iter_mut().zip(&report.deltas) {
            acc.absorb(d);
        }
        let losses = report.losses.iter().map(|&l| l as f64).collect();
        self.push(RowKind::Train, report.epoch, report.step, losses, Vec::new());
    }

    pub fn eval(&mut self, epoch: usize, eval: &EvalReport) {
        let step = self.rows.last().map_or(0, |r| r.step);
        let accuracy = (0..eval.correct.len()).map(|t| eval.accuracy_of(t)).collect();
        self.push(RowKind::Eval, epoch, step, eval.losses.clone(), accuracy);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<MetricsRow> {
        self.rows
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub rows: Vec<MetricsRow>,
    pub final_eval: EvalReport,
    pub ledgers: Vec<ResourceLedger>,
}

/// Trains the configured experiment and writes metrics.csv, summary.txt,
/// weights.spln and run.info into `output_dir/<run name>/`.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path, output_dir: &Path) -> Result<RunOutcome, RunError> {
    let resolved = cfg.resolve()?;
    let data = load_dataset(cfg, base_dir)?;
    let shards = partition(cfg, &resolved, &data)?;
    let clients = shards.len();
    let mut trainer = build_trainer(cfg, &resolved, shards)?;

    let topology = resolved.topology.map_or("none", |t| t.as_str()).to_string();
    let info = RunInfo {
        name: resolved.name.clone(),
        method: resolved.method.as_str().to_string(),
        topology: topology.clone(),
        dataset: cfg.dataset_id(),
        network: network_signature(cfg),
        epochs: resolved.epochs,
        clients,
        seed: cfg.seed,
    };

    let mut recorder = MetricsRecorder::new(&trainer, &info.method, &topology);
    let mut final_eval = None;
    for epoch in 1..=resolved.epochs {
        for report in trainer.run_epoch()? {
            recorder.step(&report);
        }
        let eval = trainer.evaluate()?;
        log::info!(
            "{} epoch {epoch}: accuracy {:.4}, loss {:.5}",
            info.name,
            eval.accuracy(),
            eval.losses[0]
        );
        recorder.eval(epoch, &eval);
        final_eval = Some(eval);
    }

    let dir = output_dir.join(&info.name);
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let prior: Vec<RunRecord> = discover_runs(output_dir)?
        .into_iter()
        .filter(|r| r.dir != dir)
        .collect();

    let rows = recorder.into_rows();
    write_metrics(&dir.join(METRICS), &rows)?;
    let weights: Vec<u8> = trainer.weight_frames().iter().flat_map(encode).collect();
    std::fs::write(dir.join(WEIGHTS), weights).map_err(io(&dir.join(WEIGHTS)))?;
    info.write(&dir)?;

    let final_eval = final_eval.expect("at least one epoch");
    let ledgers = trainer.ledgers().to_vec();
    let record = RunRecord {
        dir: dir.clone(),
        info: info.clone(),
        rows: rows.clone(),
    };
    let summary = summary_text(&record, &final_eval, &ledgers, &prior);
    std::fs::write(dir.join(SUMMARY), summary).map_err(io(&dir.join(SUMMARY)))?;

    Ok(RunOutcome {
        dir,
        info,
        rows,
        final_eval,
        ledgers,
    })
}

fn summary_text(run: &RunRecord, eval: &EvalReport, ledgers: &[ResourceLedger], prior: &[RunRecord]) -> String {
    let info = &run.info;
    let mut out = String::new();
    let _ = writeln!(out, "run {}", info.name);
    let _ = writeln!(
        out,
        "method {} topology {} dataset {} epochs {} clients {} seed {}",
        info.method, info.topology, info.dataset, info.epochs, info.clients, info.seed
    );
    for t in 0..eval.correct.len() {
        let _ = writeln!(
            out,
            "task {t}: accuracy {:.4} ({}/{}), loss {:.6}",
            eval.accuracy_of(t),
            eval.correct[t],
            eval.total,
            eval.losses[t]
        );
    }
    let _ = writeln!(out, "\nper-role totals");
    for l in ledgers {
        let _ = writeln!(out, "  {l}");
    }

    let mine = run.summary();
    let comparable: Vec<RunSummary> = prior
        .iter()
        .map(RunRecord::summary)
        .filter(|s| check_comparable(&[mine.clone(), s.clone()]).is_ok())
        .chain(std::iter::once(mine.clone()))
        .collect();
    if comparable.len() > 1 {
        if let Ok(table) = comparison_table(&comparable) {
            let _ = writeln!(out, "\n{table}");
        }
    }
    out
}
