use super::fabric::Fabric;
use super::{
    check_shards, nn_err, EngineError, EvalReport, TrainConfig, TrainStepReport, TransportKind,
};
use crate::data::Shard;
use crate::metering::ResourceLedger;
use crate::nn::{flops, infer_chain, Direction, GradMerge, LayerSpec, Sequential, ShapedLayer};
use crate::protocol::{Frame, FrameType, Message};
use crate::Tensor32;

/// Shard-size-weighted mean of several parameter lists, accumulated in f64
/// in the order given.
pub fn average_weights(contributions: &[(Vec<Tensor32>, usize)]) -> Vec<Tensor32> {
    let total: usize = contributions.iter().map(|(_, n)| n).sum();
    let template = &contributions[0].0;
    template
        .iter()
        .enumerate()
        .map(|(t, shape_of)| {
            let mut acc = vec![0f64; shape_of.numel()];
            for (weights, n) in contributions {
                for (a, &v) in acc.iter_mut().zip(weights[t].data()) {
                    *a += v as f64 * *n as f64;
                }
            }
            let data = acc.into_iter().map(|a| (a / total as f64) as f32).collect();
            Tensor32::new(shape_of.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// State shared by both full-model baselines: every client and the server
/// hold the whole network.
struct Replicas {
    fabric: Fabric,
    shaped: Vec<ShapedLayer>,
    clients: Vec<Sequential<f32>>,
    global: Sequential<f32>,
    shards: Vec<Shard>,
    cfg: TrainConfig,
    step: u32,
    epoch: usize,
}

impl Replicas {
    fn new(
        network: &[LayerSpec],
        input_shape: &[usize],
        shards: Vec<Shard>,
        cfg: TrainConfig,
        transport: TransportKind,
    ) -> Result<Self, EngineError> {
        if cfg.batch == 0 {
            return Err(EngineError::Config("batch must be positive".into()));
        }
        check_shards(&shards, shards.len().max(1))?;
        if let Some((c, s)) = shards.iter().enumerate().find(|(_, s)| s.sample_shape != input_shape) {
            return Err(EngineError::Config(format!(
                "client{c} samples have shape {:?}, the network expects {input_shape:?}",
                s.sample_shape
            )));
        }
        let shaped = infer_chain(network, input_shape).map_err(nn_err("server"))?;
        let global = Sequential::init(network, cfg.seed).map_err(nn_err("server"))?;
        let mut roles: Vec<String> = (0..shards.len()).map(|c| format!("client{c}")).collect();
        roles.push("server".into());
        Ok(Self {
            fabric: Fabric::new(roles, transport),
            shaped,
            clients: vec![global.clone(); shards.len()],
            global,
            shards,
            cfg,
            step: 0,
            epoch: 0,
        })
    }

    fn server(&self) -> usize {
        self.clients.len()
    }

    fn charge(&mut self, client: usize, batch: usize) {
        let ledger = self.fabric.ledger_mut(client);
        for dir in [Direction::Forward, Direction::Backward] {
            for l in &self.shaped {
                ledger.add_flops(dir, flops(l, batch, dir));
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

    /// Server sends the global weights to every client, which adopt them.
    fn broadcast(&mut self) -> Result<(), EngineError> {
        let server = self.server();
        for c in 0..self.clients.len() {
            let msg = self.fabric.transfer(server, c, Message::Weights(self.global.weights()))?;
            let id = format!("client{c}");
            if msg.frame_type() != FrameType::Weights {
                return Err(EngineError::UnexpectedFrame {
                    role: id,
                    expected: FrameType::Weights,
                    got: msg.frame_type(),
                });
            }
            self.clients[c]
                .set_weights(msg.into_tensors())
                .map_err(nn_err(&id))?;
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<EvalReport, EngineError> {
        let mut report = EvalReport::new(1);
        for (c, shard) in self.shards.iter().enumerate() {
            for rows in shard.batches(self.cfg.batch) {
                let out = self.clients[c]
                    .evaluate(&shard.features(rows.clone()), shard.labels(0, rows.clone()))
                    .map_err(nn_err(&format!("client{c}")))?;
                report.add(0, out.loss, out.correct, rows.len());
                report.total += rows.len();
            }
        }
        Ok(report.finish())
    }

    fn weight_frames(&self) -> Vec<Frame> {
        vec![Frame::new(
            self.step,
            self.server() as u16,
            Message::Weights(self.global.weights()),
        )]
    }
}

/// Federated averaging: clients train full local copies in turn, the server
/// averages them weighted by shard size and broadcasts the result.
pub struct FederatedSession {
    inner: Replicas,
}

impl FederatedSession {
    pub fn new(
        network: &[LayerSpec],
        input_shape: &[usize],
        shards: Vec<Shard>,
        cfg: TrainConfig,
        transport: TransportKind,
    ) -> Result<Self, EngineError> {
        Ok(Self {
            inner: Replicas::new(network, input_shape, shards, cfg, transport)?,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.inner.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.inner.fabric
    }

    pub fn num_clients(&self) -> usize {
        self.inner.clients.len()
    }

    pub fn global_weights(&self) -> Vec<Tensor32> {
        self.inner.global.weights()
    }

    pub fn client_weights(&self, client: usize) -> Vec<Tensor32> {
        self.inner.clients[client].weights()
    }

    /// One federated round. Each step report covers one local batch; a
    /// client's upload is charged to its last step and the broadcast to the
    /// round's last step.
    pub fn run_round(&mut self) -> Result<Vec<TrainStepReport>, EngineError> {
        let r = &mut self.inner;
        r.epoch += 1;
        let active: Vec<usize> = (0..r.shards.len())
            .filter(|&c| {
                let empty = r.shards[c].is_empty();
                if empty {
                    log::warn!("client{c} has an empty shard and sits out round {}", r.epoch);
                }
                !empty
            })
            .collect();
        let server = r.server();
        let mut uploads = Vec::with_capacity(active.len());
        let mut reports = Vec::new();
        for (i, &c) in active.iter().enumerate() {
            let batches = r.shards[c].batches(r.cfg.batch);
            let id = format!("client{c}");
            for e in 0..r.cfg.local_epochs {
                for (b, rows) in batches.iter().enumerate() {
                    let snapshot = r.fabric.ledgers().to_vec();
                    r.fabric.step = r.step;
                    let x = r.shards[c].features(rows.clone());
                    let out = r.clients[c]
                        .train_step(&x, r.shards[c].labels(0, rows.clone()), r.cfg.lr)
                        .map_err(nn_err(&id))?;
                    r.charge(c, rows.len());
                    let last_local = e + 1 == r.cfg.local_epochs && b + 1 == batches.len();
                    if last_local {
                        let msg = r
                            .fabric
                            .transfer(c, server, Message::Weights(r.clients[c].weights()))?;
                        uploads.push((msg.into_tensors(), r.shards[c].len()));
                        if i + 1 == active.len() {
                            let avg = average_weights(&uploads);
                            r.global.set_weights(avg).map_err(nn_err("server"))?;
                            r.broadcast()?;
                        }
                    }
                    reports.push(TrainStepReport {
                        step: r.step,
                        epoch: r.epoch,
                        losses: vec![out.loss],
                        correct: vec![out.correct],
                        batch: rows.len(),
                        active_client: Some(c),
                        handoff: false,
                        turn_ended_early: false,
                        deltas: r.deltas(&snapshot),
                    });
                    r.step += 1;
                }
            }
        }
        Ok(reports)
    }

    pub fn evaluate(&mut self) -> Result<EvalReport, EngineError> {
        self.inner.evaluate()
    }

    pub fn weight_frames(&self) -> Vec<Frame> {
        self.inner.weight_frames()
    }
}

/// Synchronous large-batch SGD: each step every client with data left sends
/// the gradient of one local batch, the server applies their mean and
/// broadcasts the new weights.
pub struct LargeBatchSession {
    inner: Replicas,
}

impl LargeBatchSession {
    pub fn new(
        network: &[LayerSpec],
        input_shape: &[usize],
        shards: Vec<Shard>,
        cfg: TrainConfig,
        transport: TransportKind,
    ) -> Result<Self, EngineError> {
        Ok(Self {
            inner: Replicas::new(network, input_shape, shards, cfg, transport)?,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.inner.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.inner.fabric
    }

    pub fn num_clients(&self) -> usize {
        self.inner.clients.len()
    }

    pub fn global_weights(&self) -> Vec<Tensor32> {
        self.inner.global.weights()
    }

    pub fn client_weights(&self, client: usize) -> Vec<Tensor32> {
        self.inner.clients[client].weights()
    }

    pub fn run_epoch(&mut self) -> Result<Vec<TrainStepReport>, EngineError> {
        let r = &mut self.inner;
        r.epoch += 1;
        let batches: Vec<_> = r.shards.iter().map(|s| s.batches(r.cfg.batch)).collect();
        let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
        let server = r.server();
        let mut reports = Vec::with_capacity(rounds);
        for k in 0..rounds {
            let snapshot = r.fabric.ledgers().to_vec();
            r.fabric.step = r.step;
            let mut received: Vec<Vec<Tensor32>> = Vec::new();
            let (mut loss_sum, mut correct, mut batch) = (0f64, 0, 0);
            for c in 0..r.clients.len() {
                let Some(rows) = batches[c].get(k).cloned() else {
                    continue;
                };
                let id = format!("client{c}");
                let x = r.shards[c].features(rows.clone());
                let (out, grads) = r.clients[c]
                    .gradients(&x, r.shards[c].labels(0, rows.clone()))
                    .map_err(nn_err(&id))?;
                r.charge(c, rows.len());
                let flat: Vec<Tensor32> = grads.into_iter().flatten().collect();
                let msg = r.fabric.transfer(c, server, Message::Gradient(flat))?;
                received.push(msg.into_tensors());
                loss_sum += out.loss as f64 * rows.len() as f64;
                correct += out.correct;
                batch += rows.len();
            }

            let mean: Vec<Tensor32> = (0..received[0].len())
                .map(|t| {
                    let column: Vec<Tensor32> = received.iter().map(|g| g[t].clone()).collect();
                    GradMerge::Mean.merge(&column)
                })
                .collect();
            let mut it = mean.into_iter();
            let per_layer: Vec<Vec<Tensor32>> = r
                .global
                .layers()
                .iter()
                .map(|l| it.by_ref().take(l.spec().param_shapes().len()).collect())
                .collect();
            r.global
                .apply_gradients(&per_layer, r.cfg.lr)
                .map_err(nn_err("server"))?;
            r.broadcast()?;

            reports.push(TrainStepReport {
                step: r.step,
                epoch: r.epoch,
                losses: vec![(loss_sum / batch as f64) as f32],
                correct: vec![correct],
                batch,
                active_client: None,
                handoff: false,
                turn_ended_early: false,
                deltas: r.deltas(&snapshot),
            });
            r.step += 1;
        }
        Ok(reports)
    }

    pub fn evaluate(&mut self) -> Result<EvalReport, EngineError> {
        self.inner.evaluate()
    }

    pub fn weight_frames(&self) -> Vec<Frame> {
        self.inner.weight_frames()
    }
}
