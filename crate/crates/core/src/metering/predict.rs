use std::fmt;

use super::ResourceLedger;
use crate::engine::{TrainConfig, TrainStepReport, WeightSyncMode};
use crate::nn::{flops, infer_chain, Direction, LayerSpec, NnError, ShapedLayer};
use crate::protocol::{
    control_frame_len, labels_frame_len, tensors_frame_len, ControlOp, FrameType,
};
use crate::topology::{PartitionPlan, RoleKind, TopologyError};

/// Predicted per-role counters for every step of a run, derived from the
/// plan, shard sizes and hyperparameters alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPrediction {
    pub roles: Vec<String>,
    /// `steps[k][r]`: counters role `r` accrues during step `k`.
    pub steps: Vec<Vec<ResourceLedger>>,
}

impl CostPrediction {
    fn new(roles: Vec<String>) -> Self {
        Self {
            roles,
            steps: Vec::new(),
        }
    }

    fn begin_step(&mut self) {
        let blank = self.roles.iter().map(ResourceLedger::new).collect();
        self.steps.push(blank);
    }

    fn current(&mut self) -> &mut Vec<ResourceLedger> {
        self.steps.last_mut().expect("step started")
    }

    fn compute(&mut self, role: usize, dir: Direction, n: u64) {
        self.current()[role].add_flops(dir, n);
    }

    fn frame(&mut self, from: usize, to: usize, ft: FrameType, bytes: usize) {
        let step = self.current();
        step[from].record_sent(ft, bytes as u64);
        step[to].record_received(ft, bytes as u64);
    }

    /// Run totals per role.
    pub fn totals(&self) -> Vec<ResourceLedger> {
        let mut out: Vec<ResourceLedger> = self.roles.iter().map(ResourceLedger::new).collect();
        for step in &self.steps {
            for (acc, d) in out.iter_mut().zip(step) {
                acc.absorb(d);
            }
        }
        out
    }
}

fn cost(layers: &[ShapedLayer], batch: usize, dir: Direction) -> u64 {
    layers.iter().map(|l| flops(l, batch, dir)).sum()
}

fn with_batch(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(shape);
    s
}

fn batch_sizes(rows: usize, batch: usize) -> Vec<usize> {
    (0..rows).step_by(batch).map(|s| batch.min(rows - s)).collect()
}

fn param_shapes(layers: &[LayerSpec]) -> Vec<Vec<usize>> {
    layers.iter().flat_map(LayerSpec::param_shapes).collect()
}

/// Split training over `epochs` epochs. `shard_sizes` are rows per data
/// client (for column partitions, the shared row count of every client).
pub fn predict_split(
    plan: &PartitionPlan,
    shard_sizes: &[usize],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<CostPrediction, TopologyError> {
    let shapes = plan.segment_shapes()?;
    let roles: Vec<String> = plan.roles.iter().map(|r| r.id.clone()).collect();
    let idx = |id: &str| roles.iter().position(|r| r == id).expect("plan role");
    let client = |c: usize| idx(&format!("client{c}"));
    let mut p = CostPrediction::new(roles.clone());
    let body = |s: usize| -> &[ShapedLayer] {
        let layers = &shapes[s].layers;
        if plan.segments[s].has_loss() {
            &layers[..layers.len() - 1]
        } else {
            layers
        }
    };

    if !plan.kind.is_horizontal() {
        let n = plan.num_clients;
        let heads: Vec<usize> = if plan.task_heads.is_empty() {
            vec![plan.segments.len() - 1]
        } else {
            plan.task_heads.iter().map(|h| h.segment).collect()
        };
        let coord = idx("coordinator");
        let rows = shard_sizes.first().copied().unwrap_or(0);
        for _ in 0..epochs {
            for b in batch_sizes(rows, cfg.batch) {
                p.begin_step();
                let ctl = control_frame_len(ControlOp::BatchRange { start: 0, count: 0 });
                for c in 0..n {
                    p.frame(coord, client(c), FrameType::Control, ctl);
                }
                for c in 0..n {
                    p.compute(client(c), Direction::Forward, cost(body(c), b, Direction::Forward));
                }
                for &h in &heads {
                    let server = idx(&plan.segments[h].owners[0]);
                    for c in 0..n {
                        let len = tensors_frame_len(&[with_batch(b, &shapes[c].output)]);
                        p.frame(client(c), server, FrameType::Activation, len);
                    }
                    for dir in [Direction::Forward, Direction::Backward] {
                        p.compute(server, dir, cost(&shapes[h].layers, b, dir));
                    }
                    for c in 0..n {
                        let len = tensors_frame_len(&[with_batch(b, &shapes[c].output)]);
                        p.frame(server, client(c), FrameType::Gradient, len);
                    }
                }
                for c in 0..n {
                    p.compute(client(c), Direction::Backward, cost(body(c), b, Direction::Backward));
                }
            }
        }
        return Ok(p);
    }

    let m = plan.segments.len();
    let replicated = plan.replicated_segments();
    let sync_len = tensors_frame_len(
        &replicated
            .iter()
            .flat_map(|&s| param_shapes(&plan.segments[s].layers))
            .collect::<Vec<_>>(),
    );
    let role_for = |s: usize, c: usize| {
        if plan.segments[s].owners.len() > 1 {
            client(c)
        } else {
            idx(&plan.segments[s].owners[0])
        }
    };
    let is_server = |r: usize| plan.roles[r].kind == RoleKind::Server;
    let per_client: Vec<Vec<usize>> = shard_sizes
        .iter()
        .map(|&n| batch_sizes(n, cfg.batch))
        .collect();
    let mut active: Option<usize> = None;
    for _ in 0..epochs {
        let mut used = vec![0; per_client.len()];
        while used.iter().zip(&per_client).any(|(u, b)| *u < b.len()) {
            for c in 0..per_client.len() {
                let take = (per_client[c].len() - used[c]).min(cfg.batches_per_turn);
                for k in 0..take {
                    let b = per_client[c][used[c]];
                    p.begin_step();
                    if k == 0 {
                        if let Some(prev) = active.filter(|&a| a != c) {
                            match cfg.weight_sync {
                                WeightSyncMode::ServerMediated => {
                                    let coord = idx("coordinator");
                                    p.frame(client(prev), coord, FrameType::Weights, sync_len);
                                    p.frame(coord, client(c), FrameType::Weights, sync_len);
                                }
                                WeightSyncMode::PeerToPeer => {
                                    p.frame(client(prev), client(c), FrameType::Weights, sync_len)
                                }
                                WeightSyncMode::Off => {}
                            }
                        }
                        active = Some(c);
                    }
                    let loss_role = role_for(m - 1, c);
                    if loss_role != client(c) {
                        p.frame(client(c), loss_role, FrameType::Labels, labels_frame_len(b));
                    }
                    for s in 0..m - 1 {
                        let r = role_for(s, c);
                        p.compute(r, Direction::Forward, cost(body(s), b, Direction::Forward));
                        let ft = if is_server(r) {
                            FrameType::Logits
                        } else {
                            FrameType::Activation
                        };
                        let len = tensors_frame_len(&[with_batch(b, &shapes[s].output)]);
                        p.frame(r, role_for(s + 1, c), ft, len);
                    }
                    for dir in [Direction::Forward, Direction::Backward] {
                        p.compute(loss_role, dir, cost(&shapes[m - 1].layers, b, dir));
                    }
                    for s in (0..m - 1).rev() {
                        let r = role_for(s, c);
                        let len = tensors_frame_len(&[with_batch(b, &shapes[s].output)]);
                        p.frame(role_for(s + 1, c), r, FrameType::Gradient, len);
                        p.compute(r, Direction::Backward, cost(body(s), b, Direction::Backward));
                    }
                    used[c] += 1;
                }
            }
        }
    }
    Ok(p)
}

fn baseline_roles(clients: usize) -> Vec<String> {
    let mut roles: Vec<String> = (0..clients).map(|c| format!("client{c}")).collect();
    roles.push("server".into());
    roles
}

fn full_cost(shaped: &[ShapedLayer], b: usize) -> (u64, u64) {
    (
        cost(shaped, b, Direction::Forward),
        cost(shaped, b, Direction::Backward),
    )
}

/// Federated averaging: one round per epoch.
pub fn predict_federated(
    network: &[LayerSpec],
    input_shape: &[usize],
    shard_sizes: &[usize],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<CostPrediction, NnError> {
    let shaped = infer_chain(network, input_shape)?;
    let weights = tensors_frame_len(&param_shapes(network));
    let n = shard_sizes.len();
    let server = n;
    let mut p = CostPrediction::new(baseline_roles(n));
    let active: Vec<usize> = (0..n).filter(|&c| shard_sizes[c] > 0).collect();
    for _ in 0..epochs {
        for (i, &c) in active.iter().enumerate() {
            let sizes = batch_sizes(shard_sizes[c], cfg.batch);
            for e in 0..cfg.local_epochs {
                for (k, &b) in sizes.iter().enumerate() {
                    p.begin_step();
                    let (f, bw) = full_cost(&shaped, b);
                    p.compute(c, Direction::Forward, f);
                    p.compute(c, Direction::Backward, bw);
                    if e + 1 == cfg.local_epochs && k + 1 == sizes.len() {
                        p.frame(c, server, FrameType::Weights, weights);
                        if i + 1 == active.len() {
                            for dst in 0..n {
                                p.frame(server, dst, FrameType::Weights, weights);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(p)
}

/// Large-batch synchronous SGD: one step per round of local batches.
pub fn predict_largebatch(
    network: &[LayerSpec],
    input_shape: &[usize],
    shard_sizes: &[usize],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<CostPrediction, NnError> {
    let shaped = infer_chain(network, input_shape)?;
    let frame = tensors_frame_len(&param_shapes(network));
    let n = shard_sizes.len();
    let server = n;
    let mut p = CostPrediction::new(baseline_roles(n));
    let sizes: Vec<Vec<usize>> = shard_sizes.iter().map(|&s| batch_sizes(s, cfg.batch)).collect();
    let rounds = sizes.iter().map(Vec::len).max().unwrap_or(0);
    for _ in 0..epochs {
        for k in 0..rounds {
            p.begin_step();
            for c in 0..n {
                if let Some(&b) = sizes[c].get(k) {
                    let (f, bw) = full_cost(&shaped, b);
                    p.compute(c, Direction::Forward, f);
                    p.compute(c, Direction::Backward, bw);
                    p.frame(c, server, FrameType::Gradient, frame);
                }
            }
            for dst in 0..n {
                p.frame(server, dst, FrameType::Weights, frame);
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterDiff {
    pub role: String,
    pub counter: String,
    pub measured: u64,
    pub predicted: u64,
}

/// Every counter where a run departed from its prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffReport {
    pub diffs: Vec<CounterDiff>,
    /// First step whose per-role deltas disagree, when step reports were given.
    pub first_divergent_step: Option<usize>,
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first_divergent_step {
            Some(s) => writeln!(f, "ledgers diverge from prediction at step {s}")?,
            None => writeln!(f, "ledgers diverge from prediction")?,
        }
        for d in &self.diffs {
            writeln!(
                f,
                "  {} {}: measured {} predicted {}",
                d.role, d.counter, d.measured, d.predicted
            )?;
        }
        Ok(())
    }
}

fn diff_ledgers(measured: &[ResourceLedger], predicted: &[ResourceLedger]) -> Vec<CounterDiff> {
    let mut diffs = Vec::new();
    if measured.len() != predicted.len() {
        diffs.push(CounterDiff {
            role: "*".into(),
            counter: "roles".into(),
            measured: measured.len() as u64,
            predicted: predicted.len() as u64,
        });
    }
    for (m, p) in measured.iter().zip(predicted) {
        for ((name, mv), (_, pv)) in m.counters().into_iter().zip(p.counters()) {
            if mv != pv {
                diffs.push(CounterDiff {
                    role: m.role.clone(),
                    counter: name,
                    measured: mv,
                    predicted: pv,
                });
            }
        }
    }
    diffs
}

/// Compares measured ledgers (and optionally the per-step reports that led
/// to them) against a prediction, with zero tolerance.
pub fn reconcile(
    measured: &[ResourceLedger],
    steps: Option<&[TrainStepReport]>,
    prediction: &CostPrediction,
) -> Result<(), DiffReport> {
    let diffs = diff_ledgers(measured, &prediction.totals());
    let step_count_differs = steps.is_some_and(|s| s.len() != prediction.steps.len());
    let first = steps.and_then(|reports| {
        reports
            .iter()
            .zip(&prediction.steps)
            .position(|(r, p)| !diff_ledgers(&r.deltas, p).is_empty())
            .or(step_count_differs.then(|| reports.len().min(prediction.steps.len())))
    });
    if diffs.is_empty() && first.is_none() {
        Ok(())
    } else {
        Err(DiffReport {
            diffs,
            first_divergent_step: first,
        })
    }
}
