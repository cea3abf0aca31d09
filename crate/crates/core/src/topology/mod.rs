//! Partition plans: how a network is cut into segments and which role owns
//! each segment, for the six split topologies.

mod build;
mod validate;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::nn::{LayerSpec, NnError, ShapedLayer};

pub use build::{build_plan, Branch, PlanExtras};
pub use validate::{validate_plan, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    /// Clients hold the bottom of the network, one server the rest and the labels.
    Vanilla,
    /// Clients hold the bottom and the top (with the loss); the server holds the middle.
    UShaped,
    /// Each client holds a feature slice and its own branch; the server concatenates.
    Vertical,
    /// Clients feed an intermediate compute-only client before the server.
    ExtendedVanilla,
    /// Client branches are concatenated and fanned out to several task servers.
    MultiTask,
    /// A chain of clients relays activations before the server.
    MultiHop,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 6] = [
        TopologyKind::Vanilla,
        TopologyKind::UShaped,
        TopologyKind::Vertical,
        TopologyKind::ExtendedVanilla,
        TopologyKind::MultiTask,
        TopologyKind::MultiHop,
    ];

    /// Topologies where each client holds whole samples and clients take turns.
    pub fn is_horizontal(self) -> bool {
        !matches!(self, TopologyKind::Vertical | TopologyKind::MultiTask)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Vanilla => "vanilla",
            TopologyKind::UShaped => "ushaped",
            TopologyKind::Vertical => "vertical",
            TopologyKind::ExtendedVanilla => "extended_vanilla",
            TopologyKind::MultiTask => "multitask",
            TopologyKind::MultiHop => "multihop",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TopologyError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoleKind {
    Client,
    Server,
    Coordinator,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Role {
    pub id: String,
    pub kind: RoleKind,
}

impl Role {
    pub fn new(id: impl Into<String>, kind: RoleKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }
}

/// Consecutive layers owned by one role, or replicated across the
/// data-holding clients of a horizontal topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: String,
    pub layers: Vec<LayerSpec>,
    pub owners: Vec<String>,
}

impl Segment {
    pub fn is_replicated(&self) -> bool {
        self.owners.len() > 1
    }

    pub fn has_loss(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_loss)
    }
}

/// Activation-forward link between two segments (indices into `segments`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskHead {
    pub server: String,
    pub segment: usize,
}

/// Per-sample shape of the raw inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputLayout {
    /// Every data client holds whole samples of this shape.
    Samples(Vec<usize>),
    /// Client `i` holds `widths[i]` feature columns of every sample.
    Columns(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub kind: TopologyKind,
    pub roles: Vec<Role>,
    pub segments: Vec<Segment>,
    pub edges: Vec<Edge>,
    /// Roles that hold labels and compute a loss.
    pub label_holders: Vec<String>,
    pub num_clients: usize,
    pub task_heads: Vec<TaskHead>,
    pub input: InputLayout,
}

impl fmt::Display for PartitionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} plan, {} clients, labels at {}", self.kind, self.num_clients, self.label_holders.join(", "))?;
        for (i, seg) in self.segments.iter().enumerate() {
            let layers: Vec<String> = seg.layers.iter().map(ToString::to_string).collect();
            writeln!(f, "  [{i}] {} @ {}: {}", seg.id, seg.owners.join(", "), layers.join(" -> "))?;
        }
        for e in &self.edges {
            writeln!(f, "  {} => {}", self.segments[e.from].id, self.segments[e.to].id)?;
        }
        Ok(())
    }
}

/// The single-machine network(s) a plan is equivalent to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Monolithic {
    Chain(Vec<LayerSpec>),
    Branched {
        branches: Vec<Vec<LayerSpec>>,
        heads: Vec<Vec<LayerSpec>>,
    },
}

impl Monolithic {
    /// One network per loss head.
    pub fn per_task(&self) -> Vec<Monolithic> {
        match self {
            Monolithic::Chain(_) => vec![self.clone()],
            Monolithic::Branched { branches, heads } => heads
                .iter()
                .map(|h| Monolithic::Branched {
                    branches: branches.clone(),
                    heads: vec![h.clone()],
                })
                .collect(),
        }
    }
}

/// Shapes seen by one segment in a concrete plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentShapes {
    /// Per-sample shape of each incoming tensor, in edge order.
    pub inputs: Vec<Vec<usize>>,
    pub layers: Vec<ShapedLayer>,
    pub output: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown topology `{0}`")]
    UnknownKind(String),
    #[error("{kind} takes {expected} cut point(s), got {got}")]
    CutCount {
        kind: TopologyKind,
        expected: &'static str,
        got: usize,
    },
    #[error("invalid cut points {cuts:?} for a network of {len} layers: {reason}")]
    InvalidCut {
        cuts: Vec<usize>,
        len: usize,
        reason: String,
    },
    #[error("{what}: expected {expected}, got {got}")]
    Arity {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    Input(String),
    #[error("plan violates {} invariant(s): {}", .0.len(), join(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl PartitionPlan {
    pub fn role_index(&self, id: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.id == id)
    }

    pub fn role(&self, id: &str) -> Option<&Role> {
        self.roles.iter().find(|r| r.id == id)
    }

    /// Client roles holding raw input data, in order.
    pub fn data_clients(&self) -> Vec<String> {
        (0..self.num_clients).map(|i| format!("client{i}")).collect()
    }

    pub fn coordinator(&self) -> Option<&Role> {
        self.roles.iter().find(|r| r.kind == RoleKind::Coordinator)
    }

    /// Segments that feed `segment`, in edge order.
    pub fn inputs_of(&self, segment: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.to == segment)
            .map(|e| e.from)
            .collect()
    }

    /// Horizontal topologies: segment indices along the activation path.
    pub fn chain(&self) -> Vec<usize> {
        (0..self.segments.len()).collect()
    }

    /// Segments whose weights every data client keeps a copy of.
    pub fn replicated_segments(&self) -> Vec<usize> {
        if !self.kind.is_horizontal() {
            return Vec::new();
        }
        let clients = self.data_clients();
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.owners == clients)
            .map(|(i, _)| i)
            .collect()
    }

    /// Shape propagation over the segment graph (edges run from lower to
    /// higher segment index).
    pub fn segment_shapes(&self) -> Result<Vec<SegmentShapes>, TopologyError> {
        let mut shapes: Vec<SegmentShapes> = Vec::with_capacity(self.segments.len());
        for (idx, seg) in self.segments.iter().enumerate() {
            let feeders = self.inputs_of(idx);
            let inputs: Vec<Vec<usize>> = if feeders.is_empty() {
                match &self.input {
                    InputLayout::Samples(shape) => vec![shape.clone()],
                    InputLayout::Columns(widths) => {
                        let w = widths.get(idx).ok_or_else(|| {
                            TopologyError::Input(format!("no feature width for segment `{}`", seg.id))
                        })?;
                        vec![vec![*w]]
                    }
                }
            } else {
                feeders
                    .iter()
                    .map(|&f| {
                        shapes
                            .get(f)
                            .map(|s| s.output.clone())
                            .ok_or_else(|| TopologyError::Input(format!("edge {f} -> {idx} runs backwards")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let mut layers = Vec::with_capacity(seg.layers.len());
            let mut current = inputs.clone();
            for spec in &seg.layers {
                let shaped = ShapedLayer::new(spec.clone(), current)?;
                current = vec![shaped.output.clone()];
                layers.push(shaped);
            }
            let output = current.into_iter().next().unwrap_or_default();
            shapes.push(SegmentShapes {
                inputs,
                layers,
                output,
            });
        }
        Ok(shapes)
    }

    /// Stitches segments back into the single-machine network.
    pub fn monolithic_equivalent(&self) -> Monolithic {
        if self.kind.is_horizontal() {
            Monolithic::Chain(
                self.segments
                    .iter()
                    .flat_map(|s| s.layers.iter().cloned())
                    .collect(),
            )
        } else {
            let heads: Vec<usize> = if self.task_heads.is_empty() {
                vec![self.segments.len() - 1]
            } else {
                self.task_heads.iter().map(|h| h.segment).collect()
            };
            let branches = self
                .segments
                .iter()
                .enumerate()
                .filter(|(i, _)| !heads.contains(i))
                .map(|(_, s)| s.layers.clone())
                .collect();
            Monolithic::Branched {
                branches,
                heads: heads.iter().map(|&h| self.segments[h].layers.clone()).collect(),
            }
        }
    }
}

#[cfg(test)]
mod tests;
