use std::ops::Range;

use super::fabric::Fabric;
use super::segment::SegmentRt;
use super::{
    check_shards, nn_err, EngineError, EvalReport, TrainConfig, TrainStepReport, TransportKind,
    WeightSyncMode,
};
use crate::data::Shard;
use crate::metering::ResourceLedger;
use crate::protocol::{ControlOp, Frame, FrameType, Message};
use crate::topology::{InputLayout, PartitionPlan, RoleKind};
use crate::Tensor32;

/// A partition plan brought to life: per-role segment copies, client
/// shards, and the fabric connecting them.
pub struct SplitSession {
    plan: PartitionPlan,
    fabric: Fabric,
    /// `segments[s][k]` is the copy held by `plan.segments[s].owners[k]`.
    segments: Vec<Vec<SegmentRt>>,
    /// Fabric role index of each owner, aligned with `segments`.
    owners: Vec<Vec<usize>>,
    shards: Vec<Shard>,
    /// Label vectors held by server-side loss owners (branched topologies), per head.
    server_labels: Vec<Vec<u16>>,
    cfg: TrainConfig,
    step: u32,
    epoch: usize,
    active: Option<usize>,
}

fn expect(message: Message, role: &str, expected: FrameType) -> Result<Message, EngineError> {
    if message.frame_type() == expected {
        Ok(message)
    } else {
        Err(EngineError::UnexpectedFrame {
            role: role.to_string(),
            expected,
            got: message.frame_type(),
        })
    }
}

fn single_tensor(message: Message, role: &str) -> Result<Tensor32, EngineError> {
    let got = message.frame_type();
    let mut tensors = message.into_tensors();
    if tensors.len() != 1 {
        return Err(EngineError::Config(format!(
            "role {role} expected one tensor in a {} frame, got {}",
            got.name(),
            tensors.len()
        )));
    }
    Ok(tensors.remove(0))
}

impl SplitSession {
    pub fn new(
        plan: PartitionPlan,
        shards: Vec<Shard>,
        cfg: TrainConfig,
        transport: TransportKind,
    ) -> Result<Self, EngineError> {
        check_shards(&shards, plan.num_clients)?;
        if cfg.batch == 0 || cfg.batches_per_turn == 0 {
            return Err(EngineError::Config("batch and batches_per_turn must be positive".into()));
        }
        let shapes = plan.segment_shapes()?;
        match &plan.input {
            InputLayout::Samples(shape) => {
                if let Some((c, s)) = shards.iter().enumerate().find(|(_, s)| &s.sample_shape != shape) {
                    return Err(EngineError::Config(format!(
                        "client{c} samples have shape {:?}, the network expects {shape:?}",
                        s.sample_shape
                    )));
                }
            }
            InputLayout::Columns(widths) => {
                for (c, (s, w)) in shards.iter().zip(widths).enumerate() {
                    if s.sample_shape != [*w] {
                        return Err(EngineError::Config(format!(
                            "client{c} holds {:?} features, its branch expects {w}",
                            s.sample_shape
                        )));
                    }
                }
                if shards.iter().any(|s| s.len() != shards[0].len()) {
                    return Err(EngineError::Config(
                        "column shards must hold the same rows".into(),
                    ));
                }
            }
        }

        let roles: Vec<String> = plan.roles.iter().map(|r| r.id.clone()).collect();
        let mut segments = Vec::with_capacity(plan.segments.len());
        let mut owners = Vec::with_capacity(plan.segments.len());
        for (seg, shape) in plan.segments.iter().zip(&shapes) {
            let mut copies = Vec::with_capacity(seg.owners.len());
            let mut idx = Vec::with_capacity(seg.owners.len());
            for owner in &seg.owners {
                copies.push(
                    SegmentRt::init(&seg.layers, shape.layers.clone(), cfg.seed)
                        .map_err(nn_err(owner))?,
                );
                idx.push(roles.iter().position(|r| r == owner).expect("validated owner"));
            }
            segments.push(copies);
            owners.push(idx);
        }

        let mut server_labels = Vec::new();
        if !plan.kind.is_horizontal() {
            let heads = plan.task_heads.len().max(1);
            if shards[0].tasks.len() < heads {
                return Err(EngineError::Config(format!(
                    "{heads} task head(s) but the dataset has {} label set(s)",
                    shards[0].tasks.len()
                )));
            }
            server_labels = shards[0].tasks[..heads].to_vec();
        }

        Ok(Self {
            fabric: Fabric::new(roles, transport),
            plan,
            segments,
            owners,
            shards,
            server_labels,
            cfg,
            step: 0,
            epoch: 0,
            active: None,
        })
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.fabric
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    /// Which copy of `segment` serves data client `client`.
    fn copy_for(&self, segment: usize, client: usize) -> usize {
        if self.segments[segment].len() > 1 {
            client
        } else {
            0
        }
    }

    /// Parameters of one copy of a segment.
    pub fn segment_weights(&self, segment: usize, copy: usize) -> Vec<Tensor32> {
        self.segments[segment][copy].weights()
    }

    /// Parameters of every client-held segment as seen by one data client.
    pub fn client_weights(&self, client: usize) -> Vec<Tensor32> {
        self.plan
            .replicated_segments()
            .into_iter()
            .flat_map(|s| self.segments[s][self.copy_for(s, client)].weights())
            .collect()
    }

    /// The data client whose copies are current (last to train).
    pub fn active_client(&self) -> Option<usize> {
        self.active
    }

    pub fn weight_frames(&self) -> Vec<Frame> {
        let current = self.active.unwrap_or(0);
        (0..self.segments.len())
            .map(|s| {
                let k = self.copy_for(s, current);
                Frame::new(
                    self.step,
                    self.owners[s][k] as u16,
                    Message::Weights(self.segments[s][k].weights()),
                )
            })
            .collect()
    }

    fn role_id(&self, role: usize) -> String {
        self.fabric.roles()[role].clone()
    }

    fn is_server(&self, role: usize) -> bool {
        self.plan.roles[role].kind == RoleKind::Server
    }

    fn client_role(&self, client: usize) -> usize {
        self.fabric
            .role_index(&format!("client{client}"))
            .expect("data client role")
    }

    fn coordinator_role(&self) -> usize {
        self.fabric.role_index("coordinator").expect("coordinator role")
    }

    pub fn run_epoch(&mut self) -> Result<Vec<TrainStepReport>, EngineError> {
        self.epoch += 1;
        if self.plan.kind.is_horizontal() {
            self.run_turns()
        } else {
            let rows = self.shards[0].batches(self.cfg.batch);
            rows.into_iter().map(|r| self.branched_step(r)).collect()
        }
    }

    /// Round-robin over clients until every shard is used up for this epoch.
    fn run_turns(&mut self) -> Result<Vec<TrainStepReport>, EngineError> {
        let batches: Vec<Vec<Range<usize>>> =
            self.shards.iter().map(|s| s.batches(self.cfg.batch)).collect();
        let mut cursor = vec![0; batches.len()];
        let mut reports = Vec::new();
        loop {
            let mut progressed = false;
            for c in 0..batches.len() {
                let remaining = batches[c].len() - cursor[c];
                if remaining == 0 {
                    continue;
                }
                progressed = true;
                let take = remaining.min(self.cfg.batches_per_turn);
                for k in 0..take {
                    let snapshot = self.fabric.ledgers().to_vec();
                    self.fabric.step = self.step;
                    let handoff = k == 0 && self.hand_off(c)?;
                    let mut report = self.chain_step(c, batches[c][cursor[c]].clone())?;
                    report.handoff = handoff;
                    report.turn_ended_early = take < self.cfg.batches_per_turn && k + 1 == take;
                    report.deltas = self.deltas(&snapshot);
                    reports.push(report);
                    cursor[c] += 1;
                    self.step += 1;
                }
            }
            if !progressed {
                return Ok(reports);
            }
        }
    }

    fn deltas(&self, snapshot: &[ResourceLedger]) -> Vec<ResourceLedger> {
        self.fabric
            .ledgers()
            .iter()
            .zip(snapshot)
            .map(|(now, then)| now.delta_since(then))
            .collect()
    }

    /// Passes the turn to `client`, syncing client-held weights from the
    /// previous holder. Returns whether a handoff happened.
    fn hand_off(&mut self, client: usize) -> Result<bool, EngineError> {
        let previous = self.active.replace(client);
        let Some(from) = previous.filter(|&p| p != client) else {
            return Ok(false);
        };
        if self.cfg.weight_sync == WeightSyncMode::Off {
            return Ok(true);
        }
        let replicated = self.plan.replicated_segments();
        let weights: Vec<Tensor32> = replicated
            .iter()
            .flat_map(|&s| self.segments[s][from].weights())
            .collect();
        let src = self.client_role(from);
        let dst = self.client_role(client);
        let received = match self.cfg.weight_sync {
            WeightSyncMode::ServerMediated => {
                let coord = self.coordinator_role();
                let at_coord = self.fabric.transfer(src, coord, Message::Weights(weights))?;
                self.fabric.transfer(coord, dst, at_coord)?
            }
            _ => self.fabric.transfer(src, dst, Message::Weights(weights))?,
        };
        let role = self.role_id(dst);
        let mut tensors = expect(received, &role, FrameType::Weights)?.into_tensors().into_iter();
        for s in replicated {
            let n = self.segments[s][client].param_tensor_count();
            self.segments[s][client]
                .set_weights(tensors.by_ref().take(n).collect())
                .map_err(nn_err(&role))?;
        }
        Ok(true)
    }

    /// Role serving segment `s` for data from `client`.
    fn role_for(&self, s: usize, client: usize) -> usize {
        self.owners[s][self.copy_for(s, client)]
    }

    fn forward_type(&self, sender: usize) -> FrameType {
        if self.is_server(sender) {
            FrameType::Logits
        } else {
            FrameType::Activation
        }
    }

    fn tensor_message(frame_type: FrameType, t: Tensor32) -> Message {
        match frame_type {
            FrameType::Logits => Message::Logits(vec![t]),
            FrameType::Gradient => Message::Gradient(vec![t]),
            _ => Message::Activation(vec![t]),
        }
    }

    /// Ships labels to the loss owner when it is not the data client.
    fn labels_to_loss(&mut self, client: usize, labels: &[u16]) -> Result<Vec<u16>, EngineError> {
        let src = self.client_role(client);
        let dst = self.role_for(self.segments.len() - 1, client);
        if src == dst {
            return Ok(labels.to_vec());
        }
        let role = self.role_id(dst);
        match expect(self.fabric.transfer(src, dst, Message::Labels(labels.to_vec()))?, &role, FrameType::Labels)? {
            Message::Labels(l) => Ok(l),
            _ => unreachable!(),
        }
    }

    fn chain_step(&mut self, client: usize, rows: Range<usize>) -> Result<TrainStepReport, EngineError> {
        let lr = self.cfg.lr;
        let m = self.segments.len();
        let x = self.shards[client].features(rows.clone());
        let labels = self.shards[client].labels(0, rows.clone()).to_vec();
        let labels = self.labels_to_loss(client, &labels)?;

        let mut act = x;
        for s in 0..m - 1 {
            let (role, next) = (self.role_for(s, client), self.role_for(s + 1, client));
            let k = self.copy_for(s, client);
            let out = self.segments[s][k]
                .forward(&[act], self.fabric.ledger_mut(role))
                .map_err(nn_err(&self.role_id(role)))?;
            let ft = self.forward_type(role);
            let msg = self.fabric.transfer(role, next, Self::tensor_message(ft, out))?;
            act = single_tensor(expect(msg, &self.role_id(next), ft)?, &self.role_id(next))?;
        }

        let last_role = self.role_for(m - 1, client);
        let k = self.copy_for(m - 1, client);
        let step = self.segments[m - 1][k]
            .train_with_loss(&[act], &labels, lr, self.fabric.ledger_mut(last_role))
            .map_err(nn_err(&self.role_id(last_role)))?;

        let mut g = step.input_grads.into_iter().next().expect("one input");
        for s in (0..m - 1).rev() {
            let (role, upstream) = (self.role_for(s, client), self.role_for(s + 1, client));
            let msg = self.fabric.transfer(upstream, role, Message::Gradient(vec![g]))?;
            let role_id = self.role_id(role);
            g = single_tensor(expect(msg, &role_id, FrameType::Gradient)?, &role_id)?;
            let k = self.copy_for(s, client);
            g = self.segments[s][k]
                .backward(g, lr, self.fabric.ledger_mut(role))
                .map_err(nn_err(&role_id))?
                .swap_remove(0);
        }

        Ok(TrainStepReport {
            step: self.step,
            epoch: self.epoch,
            losses: vec![step.loss],
            correct: vec![step.correct],
            batch: rows.len(),
            active_client: Some(client),
            handoff: false,
            turn_ended_early: false,
            deltas: Vec::new(),
        })
    }

    /// Loss-head segments and the task each one supervises.
    fn heads(&self) -> Vec<usize> {
        if self.plan.task_heads.is_empty() {
            vec![self.segments.len() - 1]
        } else {
            self.plan.task_heads.iter().map(|h| h.segment).collect()
        }
    }

    /// Coordinator broadcasts the row range; returns it as each client decoded it.
    fn broadcast_rows(&mut self, rows: &Range<usize>) -> Result<Vec<Range<usize>>, EngineError> {
        let coord = self.coordinator_role();
        let op = ControlOp::BatchRange {
            start: rows.start as u32,
            count: rows.len() as u32,
        };
        (0..self.plan.num_clients)
            .map(|c| {
                let dst = self.client_role(c);
                match self.fabric.transfer(coord, dst, Message::Control(op))? {
                    Message::Control(ControlOp::BatchRange { start, count }) => {
                        Ok(start as usize..(start + count) as usize)
                    }
                    other => Err(EngineError::UnexpectedFrame {
                        role: self.role_id(dst),
                        expected: FrameType::Control,
                        got: other.frame_type(),
                    }),
                }
            })
            .collect()
    }

    fn branched_step(&mut self, rows: Range<usize>) -> Result<TrainStepReport, EngineError> {
        let snapshot = self.fabric.ledgers().to_vec();
        self.fabric.step = self.step;
        let lr = self.cfg.lr;
        let n = self.plan.num_clients;
        let ranges = self.broadcast_rows(&rows)?;

        let mut outs = Vec::with_capacity(n);
        for (c, r) in ranges.into_iter().enumerate() {
            let role = self.owners[c][0];
            let x = self.shards[c].features(r);
            outs.push(
                self.segments[c][0]
                    .forward(&[x], self.fabric.ledger_mut(role))
                    .map_err(nn_err(&self.role_id(role)))?,
            );
        }

        let mut per_client: Vec<Vec<Tensor32>> = vec![Vec::new(); n];
        let mut losses = Vec::new();
        let mut correct = Vec::new();
        for (task, seg) in self.heads().into_iter().enumerate() {
            let server = self.owners[seg][0];
            let server_id = self.role_id(server);
            let mut inputs = Vec::with_capacity(n);
            for (c, out) in outs.iter().enumerate() {
                let msg = self.fabric.transfer(self.owners[c][0], server, Message::Activation(vec![out.clone()]))?;
                inputs.push(single_tensor(expect(msg, &server_id, FrameType::Activation)?, &server_id)?);
            }
            let labels = &self.server_labels[task][rows.clone()];
            let step = self.segments[seg][0]
                .train_with_loss(&inputs, labels, lr, self.fabric.ledger_mut(server))
                .map_err(nn_err(&server_id))?;
            for (c, g) in step.input_grads.into_iter().enumerate() {
                let dst = self.owners[c][0];
                let msg = self.fabric.transfer(server, dst, Message::Gradient(vec![g]))?;
                let id = self.role_id(dst);
                per_client[c].push(single_tensor(expect(msg, &id, FrameType::Gradient)?, &id)?);
            }
            losses.push(step.loss);
            correct.push(step.correct);
        }

        for (c, grads) in per_client.into_iter().enumerate() {
            let role = self.owners[c][0];
            let merged = self.cfg.merge.merge(&grads);
            self.segments[c][0]
                .backward(merged, lr, self.fabric.ledger_mut(role))
                .map_err(nn_err(&self.role_id(role)))?;
        }

        let report = TrainStepReport {
            step: self.step,
            epoch: self.epoch,
            losses,
            correct,
            batch: rows.len(),
            active_client: None,
            handoff: false,
            turn_ended_early: false,
            deltas: self.deltas(&snapshot),
        };
        self.step += 1;
        Ok(report)
    }

    /// Forward-only pass over every shard, moving tensors exactly as in
    /// training. Client-held segments use the current (most recently trained)
    /// copy. Ledgers are restored afterwards.
    pub fn evaluate(&mut self) -> Result<EvalReport, EngineError> {
        let scratch = self
            .fabric
            .ledgers()
            .iter()
            .map(|l| ResourceLedger::new(l.role.clone()))
            .collect();
        let saved = self.fabric.replace_ledgers(scratch);
        let result = if self.plan.kind.is_horizontal() {
            self.evaluate_chain()
        } else {
            self.evaluate_branched()
        };
        self.fabric.replace_ledgers(saved);
        result
    }

    fn evaluate_chain(&mut self) -> Result<EvalReport, EngineError> {
        let m = self.segments.len();
        let current = self.active.unwrap_or(0);
        let mut report = EvalReport::new(1);
        for client in 0..self.shards.len() {
            for rows in self.shards[client].batches(self.cfg.batch) {
                let labels = self.shards[client].labels(0, rows.clone()).to_vec();
                let labels = self.labels_to_loss(client, &labels)?;
                let mut act = self.shards[client].features(rows.clone());
                for s in 0..m - 1 {
                    let (role, next) = (self.role_for(s, client), self.role_for(s + 1, client));
                    let out = self.segments[s][self.copy_for(s, current)]
                        .infer(&[act])
                        .map_err(nn_err(&self.role_id(role)))?;
                    let ft = self.forward_type(role);
                    let msg = self.fabric.transfer(role, next, Self::tensor_message(ft, out))?;
                    act = single_tensor(msg, &self.role_id(next))?;
                }
                let last = self.role_for(m - 1, client);
                let (loss, correct) = self.segments[m - 1][self.copy_for(m - 1, current)]
                    .infer_loss(&[act], &labels)
                    .map_err(nn_err(&self.role_id(last)))?;
                report.add(0, loss, correct, rows.len());
                report.total += rows.len();
            }
        }
        Ok(report.finish())
    }

    fn evaluate_branched(&mut self) -> Result<EvalReport, EngineError> {
        let heads = self.heads();
        let n = self.plan.num_clients;
        let mut report = EvalReport::new(heads.len());
        for rows in self.shards[0].batches(self.cfg.batch) {
            let ranges = self.broadcast_rows(&rows)?;
            let mut outs = Vec::with_capacity(n);
            for (c, r) in ranges.into_iter().enumerate() {
                let x = self.shards[c].features(r);
                outs.push(
                    self.segments[c][0]
                        .infer(&[x])
                        .map_err(nn_err(&self.role_id(self.owners[c][0])))?,
                );
            }
            for (task, &seg) in heads.iter().enumerate() {
                let server = self.owners[seg][0];
                let mut inputs = Vec::with_capacity(n);
                for (c, out) in outs.iter().enumerate() {
                    let msg = self.fabric.transfer(self.owners[c][0], server, Message::Activation(vec![out.clone()]))?;
                    inputs.push(single_tensor(msg, &self.role_id(server))?);
                }
                let (loss, correct) = self.segments[seg][0]
                    .infer_loss(&inputs, &self.server_labels[task][rows.clone()])
                    .map_err(nn_err(&self.role_id(server)))?;
                report.add(task, loss, correct, rows.len());
            }
            report.total += rows.len();
        }
        Ok(report.finish())
    }
}
