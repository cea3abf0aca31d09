//! Split-learning engine and simulator.
//!
//! A network is partitioned into segments owned by clients and servers; only
//! cut-layer activations and gradients (plus labels, where the loss sits on a
//! server) cross role boundaries, as framed binary messages over a transport.
//! Every role keeps a ledger of FLOPs executed and bytes moved, and closed-form
//! predictors reproduce those ledgers exactly. Federated averaging and
//! large-batch synchronous SGD run on the same machinery as baselines.

pub mod config;
pub mod data;
pub mod engine;
pub mod experiment;
pub mod metering;
pub mod nn;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod topology;

pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError};

/// Working precision of training and of the wire format.
pub type Tensor32 = Tensor<f32>;
/// Reference precision used by numerical checks.
pub type Tensor64 = Tensor<f64>;
pub type LayerState32 = nn::LayerState<f32>;
pub type Sequential32 = nn::Sequential<f32>;
pub type BranchedNet32 = nn::BranchedNet<f32>;
