//! Minimal deterministic reverse-mode network core: layer specs, layer state
//! with forward/backward passes and SGD, the FLOP cost model, and sequential
//! and branched reference models.

mod flops;
mod layer;
mod loss;
mod model;
mod spec;

use thiserror::Error;

use crate::tensor::TensorError;

pub use flops::{flops, Direction, LayerCost};
pub use layer::{glorot_bound, sgd_step, Gradients, LayerState};
pub use loss::{softmax_cross_entropy, LossOutput};
pub use model::{BranchedNet, GradMerge, Sequential, StepOutcome};
pub(crate) use model::set_flat_weights;
pub use spec::{infer_chain, LayerKind, LayerSpec, ShapedLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer `{layer}`: expected input {expected}, got shape {actual:?}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("layer `{layer}`: expected {expected} input(s), got {actual}")]
    Arity {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("layer `{layer}`: backward called without a preceding forward")]
    BackwardWithoutForward { layer: String },
    #[error("layer `{layer}`: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        layer: String,
        label: usize,
        num_classes: usize,
    },
    #[error("layer `{layer}`: {labels} labels for a batch of {batch}")]
    LabelCount {
        layer: String,
        labels: usize,
        batch: usize,
    },
    #[error("layer `{layer}`: produced a non-finite value")]
    NonFinite { layer: String },
    #[error("layer `{layer}`: invalid configuration: {reason}")]
    InvalidSpec { layer: String, reason: String },
    #[error("layer `{layer}`: loss layers take labels, use the loss entry point")]
    LossLayer { layer: String },
    #[error("cannot parse layer `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
