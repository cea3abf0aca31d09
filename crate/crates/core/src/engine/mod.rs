//! Training orchestration over metered transports.
//!
//! Every role owns its layers, data and ledger; roles interact only through
//! frames sent over a [`Fabric`]. Roles are stepped in a fixed interleaving on
//! one thread, so a run is reproducible down to the frame transcript whether
//! the links are in-process channels or loopback TCP sockets.

mod baseline;
mod fabric;
mod segment;
mod split;

use thiserror::Error;

use crate::data::{DataError, Shard};
use crate::metering::ResourceLedger;
use crate::nn::{GradMerge, NnError};
use crate::protocol::{Frame, FrameType, ProtocolError};
use crate::topology::TopologyError;

pub use baseline::{average_weights, FederatedSession, LargeBatchSession};
pub use fabric::{Fabric, TranscriptEntry};
pub use split::SplitSession;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("step {step}: {from} -> {to}{}: {source}", frame.map(|f| format!(" ({} frame)", f.name())).unwrap_or_default())]
    Transfer {
        from: String,
        to: String,
        frame: Option<FrameType>,
        step: u32,
        #[source]
        source: ProtocolError,
    },
    #[error("role {role}: {source}")]
    Nn {
        role: String,
        #[source]
        source: NnError,
    },
    #[error("role {role} expected a {expected} frame, got {got}")]
    UnexpectedFrame {
        role: String,
        expected: FrameType,
        got: FrameType,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Config(String),
}

pub(crate) fn nn_err(role: &str) -> impl Fn(NnError) -> EngineError + '_ {
    move |source| EngineError::Nn {
        role: role.to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum TransportKind {
    #[default]
    InProcess,
    /// Loopback sockets; with addresses, links bind to them in the order opened.
    Tcp { addresses: Vec<String> },
}

/// How client-held segment weights move when the training turn passes from
/// one client to the next.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeightSyncMode {
    /// Outgoing client uploads to the coordinator, which forwards to the next client.
    #[default]
    ServerMediated,
    PeerToPeer,
    /// No sync; client copies drift apart. Diagnostic only.
    Off,
}

impl std::str::FromStr for WeightSyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "server_mediated" | "servermediated" => Ok(Self::ServerMediated),
            "peer_to_peer" | "p2p" => Ok(Self::PeerToPeer),
            "off" | "none" => Ok(Self::Off),
            other => Err(format!(
                "unknown weight sync `{other}` (server_mediated, peer_to_peer, off)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f32,
    pub local_epochs: usize,
    pub batches_per_turn: usize,
    pub weight_sync: WeightSyncMode,
    pub merge: GradMerge,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            lr: 0.05,
            local_epochs: 1,
            batches_per_turn: 1,
            weight_sync: WeightSyncMode::default(),
            merge: GradMerge::Sum,
            seed: 0,
        }
    }
}

/// Outcome of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepReport {
    pub step: u32,
    pub epoch: usize,
    /// One loss per task head.
    pub losses: Vec<f32>,
    pub correct: Vec<usize>,
    pub batch: usize,
    /// Data client whose batch this was; `None` when all clients take part.
    pub active_client: Option<usize>,
    /// Client-segment weights changed hands before this step.
    pub handoff: bool,
    /// The active client's shard ran out before its turn was complete.
    pub turn_ended_early: bool,
    /// Counter deltas for every role over this step, in fabric role order.
    pub deltas: Vec<ResourceLedger>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sample-weighted mean loss per task.
    pub losses: Vec<f64>,
    pub correct: Vec<usize>,
    pub total: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.accuracy_of(0)
    }

    pub fn accuracy_of(&self, task: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct[task] as f64 / self.total as f64
        }
    }

    pub(crate) fn new(tasks: usize) -> Self {
        Self {
            losses: vec![0.0; tasks],
            correct: vec![0; tasks],
            total: 0,
        }
    }

    pub(crate) fn add(&mut self, task: usize, loss: f32, correct: usize, batch: usize) {
        self.losses[task] += loss as f64 * batch as f64;
        self.correct[task] += correct;
    }

    pub(crate) fn finish(mut self) -> Self {
        if self.total > 0 {
            for l in &mut self.losses {
                *l /= self.total as f64;
            }
        }
        self
    }
}

/// Any of the three training methods behind one interface.
pub enum Trainer {
    Split(SplitSession),
    Federated(FederatedSession),
    LargeBatch(LargeBatchSession),
}

impl Trainer {
    pub fn run_epoch(&mut self) -> Result<Vec<TrainStepReport>, EngineError> {
        match self {
            Trainer::Split(s) => s.run_epoch(),
            Trainer::Federated(s) => s.run_round(),
            Trainer::LargeBatch(s) => s.run_epoch(),
        }
    }

    /// Forward-only pass over every client's shard. Traffic is not charged
    /// to the training ledgers.
    pub fn evaluate(&mut self) -> Result<EvalReport, EngineError> {
        match self {
            Trainer::Split(s) => s.evaluate(),
            Trainer::Federated(s) => s.evaluate(),
            Trainer::LargeBatch(s) => s.evaluate(),
        }
    }

    pub fn fabric(&self) -> &Fabric {
        match self {
            Trainer::Split(s) => s.fabric(),
            Trainer::Federated(s) => s.fabric(),
            Trainer::LargeBatch(s) => s.fabric(),
        }
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        match self {
            Trainer::Split(s) => s.fabric_mut(),
            Trainer::Federated(s) => s.fabric_mut(),
            Trainer::LargeBatch(s) => s.fabric_mut(),
        }
    }

    pub fn ledgers(&self) -> &[ResourceLedger] {
        self.fabric().ledgers()
    }

    /// Role indices of the clients that hold raw data.
    pub fn data_client_roles(&self) -> Vec<usize> {
        let n = match self {
            Trainer::Split(s) => s.plan().num_clients,
            Trainer::Federated(s) => s.num_clients(),
            Trainer::LargeBatch(s) => s.num_clients(),
        };
        (0..n)
            .filter_map(|c| self.fabric().role_index(&format!("client{c}")))
            .collect()
    }

    /// Final trained parameters as weight frames, one per segment or one for
    /// a whole network.
    pub fn weight_frames(&self) -> Vec<Frame> {
        match self {
            Trainer::Split(s) => s.weight_frames(),
            Trainer::Federated(s) => s.weight_frames(),
            Trainer::LargeBatch(s) => s.weight_frames(),
        }
    }
}

pub(crate) fn check_shards(shards: &[Shard], expected: usize) -> Result<(), EngineError> {
    if shards.len() != expected {
        return Err(EngineError::Config(format!(
            "{expected} client(s) but {} shard(s)",
            shards.len()
        )));
    }
    if shards.iter().all(Shard::is_empty) {
        return Err(EngineError::Config("every shard is empty".into()));
    }
    Ok(())
}

