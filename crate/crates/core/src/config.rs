//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "vanilla-mnist"
//! method = "splitnn"            # splitnn | federated | largebatch
//! seed = 7
//! output_dir = "runs"
//!
//! [topology]                    # splitnn only
//! kind = "vanilla"              # vanilla | ushaped | vertical | extended_vanilla | multitask | multihop
//! cut_points = [2]
//! weight_sync = "server_mediated"
//! merge = "sum"
//!
//! [network]
//! input_shape = [784]
//! layers = ["fc1: dense 784 64", "relu1: relu", "fc2: dense 64 2", "loss: softmax_ce 2"]
//!
//! [dataset]                     # exactly one source
//! mnist_images = "train-images.idx3-ubyte"
//! mnist_labels = "train-labels.idx1-ubyte"
//! flatten = true
//!
//! [partition]
//! scheme = "horizontal"         # horizontal | vertical
//! num_clients = 5
//! strategy = "equal"            # equal | dirichlet
//!
//! [hyperparams]
//! batch = 32
//! lr = 0.05
//! epochs = 10
//!
//! [transport]
//! kind = "inprocess"            # inprocess | tcp
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::engine::{TrainConfig, TransportKind, WeightSyncMode};
use crate::nn::{GradMerge, LayerSpec};
use crate::topology::{build_plan, Branch, PartitionPlan, PlanExtras, TopologyKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Splitnn,
    Federated,
    Largebatch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Splitnn => "splitnn",
            Method::Federated => "federated",
            Method::Largebatch => "largebatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub topology: Option<TopologySection>,
    pub network: NetworkSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub transport: TransportSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: String,
    #[serde(default)]
    pub cut_points: Vec<usize>,
    pub weight_sync: Option<String>,
    pub merge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default)]
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<String>,
    #[serde(default)]
    pub branches: Vec<BranchSection>,
    #[serde(default)]
    pub heads: Vec<HeadSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSection {
    pub feature_width: usize,
    pub layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub extra_tasks: usize,
    pub separation: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub cifar: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub flatten: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "one")]
    pub num_clients: usize,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub feature_widths: Vec<usize>,
}

fn default_scheme() -> String {
    "horizontal".into()
}

fn default_strategy() -> String {
    "equal".into()
}

fn one() -> usize {
    1
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            num_clients: 1,
            strategy: default_strategy(),
            alpha: None,
            feature_widths: Vec::new(),
        }
    }
}

/// Repo defaults, not tuned to any published setting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub batch: usize,
    pub lr: f32,
    pub epochs: usize,
    pub local_epochs: usize,
    pub batches_per_turn: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch: 32,
            lr: 0.05,
            epochs: 10,
            local_epochs: 1,
            batches_per_turn: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSection {
    #[serde(default = "default_transport")]
    pub kind: String,
    #[serde(default)]
    pub addresses: Vec<String>,
}

fn default_transport() -> String {
    "inprocess".into()
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            kind: default_transport(),
            addresses: Vec::new(),
        }
    }
}

/// A checked configuration, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub name: String,
    pub method: Method,
    pub topology: Option<TopologyKind>,
    /// Split plan (splitnn) or full network (baselines).
    pub plan: Option<PartitionPlan>,
    pub network: Vec<LayerSpec>,
    pub train: TrainConfig,
    pub epochs: usize,
    pub transport: TransportKind,
    pub vertical: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| match &self.topology {
            Some(t) if self.method == Method::Splitnn => format!("splitnn-{}", t.kind),
            _ => self.method.as_str().to_string(),
        })
    }

    /// Identifies the data a run trains on, for comparing runs.
    pub fn dataset_id(&self) -> String {
        let d = &self.dataset;
        let name = |p: &Option<PathBuf>| {
            p.as_ref()
                .and_then(|p| p.file_name())
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        if let Some(s) = &d.synthetic {
            format!(
                "synthetic-n{}-d{}-c{}-s{}-t{}",
                s.n, s.dims, s.classes, s.seed, s.extra_tasks
            )
        } else if d.csv.is_some() {
            format!("csv-{}", name(&d.csv))
        } else if d.cifar.is_some() {
            format!("cifar-{}", name(&d.cifar))
        } else {
            format!("mnist-{}", name(&d.mnist_images))
        }
    }

    /// Checks every invariant that does not need the data itself and
    /// returns all violations at once.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut errors = Vec::new();
        let h = &self.hyperparams;
        if h.batch == 0 {
            errors.push("hyperparams.batch must be at least 1".into());
        }
        if !h.lr.is_finite() || h.lr < 0.0 {
            errors.push(format!("hyperparams.lr must be a finite non-negative number, got {}", h.lr));
        }
        if h.epochs == 0 {
            errors.push("hyperparams.epochs must be at least 1".into());
        }
        if h.local_epochs == 0 {
            errors.push("hyperparams.local_epochs must be at least 1".into());
        }
        if h.batches_per_turn == 0 {
            errors.push("hyperparams.batches_per_turn must be at least 1".into());
        }

        let d = &self.dataset;
        let sources = [
            d.mnist_images.is_some() || d.mnist_labels.is_some(),
            d.csv.is_some(),
            d.cifar.is_some(),
            d.synthetic.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            1 => {}
            0 => errors.push("dataset: no source given (mnist_images/mnist_labels, csv, cifar or synthetic)".into()),
            n => errors.push(format!("dataset: exactly one source is allowed, {n} given")),
        }
        if d.mnist_images.is_some() != d.mnist_labels.is_some() {
            errors.push("dataset: mnist_images and mnist_labels go together".into());
        }

        let p = &self.partition;
        let vertical = match p.scheme.as_str() {
            "horizontal" => false,
            "vertical" => true,
            other => {
                errors.push(format!("partition.scheme `{other}` is not horizontal or vertical"));
                false
            }
        };
        if p.num_clients == 0 {
            errors.push("partition.num_clients must be at least 1".into());
        }
        if !vertical {
            match (p.strategy.as_str(), p.alpha) {
                ("equal", _) => {}
                ("dirichlet", Some(a)) if a > 0.0 && a.is_finite() => {}
                ("dirichlet", _) => errors.push("partition.alpha must be positive for dirichlet".into()),
                (other, _) => errors.push(format!("partition.strategy `{other}` is not equal or dirichlet")),
            }
        }
        if vertical {
            if p.feature_widths.is_empty() {
                errors.push("partition.feature_widths is required for a vertical partition".into());
            }
            if p.feature_widths.len() != p.num_clients && p.num_clients != 1 {
                errors.push(format!(
                    "partition.num_clients is {} but {} feature widths are given",
                    p.num_clients,
                    p.feature_widths.len()
                ));
            }
            if let Some(s) = &d.synthetic {
                let sum: usize = p.feature_widths.iter().sum();
                if sum != s.dims {
                    errors.push(format!(
                        "partition.feature_widths sum to {sum} but the dataset has {} features",
                        s.dims
                    ));
                }
            }
        }

        let transport = match self.transport.kind.as_str() {
            "inprocess" => TransportKind::InProcess,
            "tcp" => TransportKind::Tcp {
                addresses: self.transport.addresses.clone(),
            },
            other => {
                errors.push(format!("transport.kind `{other}` is not inprocess or tcp"));
                TransportKind::InProcess
            }
        };

        let parse_layers = |what: &str, layers: &[String], errors: &mut Vec<String>| -> Vec<LayerSpec> {
            layers
                .iter()
                .enumerate()
                .filter_map(|(i, text)| {
                    LayerSpec::parse_with_default(text, &format!("{what}{i}"))
                        .map_err(|e| errors.push(format!("network: {what} layer {i}: {e}")))
                        .ok()
                })
                .collect()
        };
        let network = parse_layers("layer", &self.network.layers, &mut errors);
        let branches: Vec<Branch> = self
            .network
            .branches
            .iter()
            .enumerate()
            .map(|(b, s)| Branch {
                feature_width: s.feature_width,
                layers: parse_layers(&format!("branch{b}_"), &s.layers, &mut errors),
            })
            .collect();
        let heads: Vec<Vec<LayerSpec>> = self
            .network
            .heads
            .iter()
            .enumerate()
            .map(|(h, s)| parse_layers(&format!("head{h}_"), &s.layers, &mut errors))
            .collect();

        let mut train = TrainConfig {
            batch: h.batch,
            lr: h.lr,
            local_epochs: h.local_epochs,
            batches_per_turn: h.batches_per_turn,
            seed: self.seed,
            ..Default::default()
        };
        let mut topology = None;
        match (self.method, &self.topology) {
            (Method::Splitnn, None) => errors.push("method splitnn needs a [topology] section".into()),
            (Method::Splitnn, Some(t)) => {
                match t.kind.parse::<TopologyKind>() {
                    Ok(k) => topology = Some(k),
                    Err(e) => errors.push(format!("topology.kind: {e}")),
                }
                if let Some(w) = &t.weight_sync {
                    match w.parse::<WeightSyncMode>() {
                        Ok(m) => train.weight_sync = m,
                        Err(e) => errors.push(format!("topology.weight_sync: {e}")),
                    }
                }
                match t.merge.as_deref() {
                    None | Some("sum") => train.merge = GradMerge::Sum,
                    Some("mean") => train.merge = GradMerge::Mean,
                    Some(other) => errors.push(format!("topology.merge `{other}` is not sum or mean")),
                }
            }
            (_, Some(_)) => errors.push(format!(
                "method {} takes no [topology] section",
                self.method.as_str()
            )),
            (_, None) => {}
        }
        if let Some(k) = topology {
            let columns = matches!(k, TopologyKind::Vertical | TopologyKind::MultiTask);
            if vertical && !columns {
                errors.push(format!(
                    "a vertical partition needs the vertical or multitask topology, not {k}"
                ));
            }
            if columns && !vertical {
                errors.push(format!("topology {k} needs partition.scheme = \"vertical\""));
            }
            if columns {
                let widths: Vec<usize> = branches.iter().map(|b| b.feature_width).collect();
                if widths != p.feature_widths {
                    errors.push(format!(
                        "network branch widths {widths:?} differ from partition.feature_widths {:?}",
                        p.feature_widths
                    ));
                }
            }
        } else if vertical && self.method != Method::Splitnn {
            errors.push(format!(
                "method {} needs a horizontal partition",
                self.method.as_str()
            ));
        }
        if self.method != Method::Splitnn && self.network.input_shape.is_empty() {
            errors.push("network.input_shape is required".into());
        }

        let mut plan = None;
        if errors.is_empty() {
            if let Some(kind) = topology {
                let clients = if vertical {
                    p.feature_widths.len()
                } else {
                    p.num_clients
                };
                let extras = PlanExtras {
                    input_shape: self.network.input_shape.clone(),
                    branches: branches.clone(),
                    heads: heads.clone(),
                };
                let cuts = &self.topology.as_ref().unwrap().cut_points;
                match build_plan(kind, &network, cuts, clients, &extras) {
                    Ok(built) => plan = Some(built),
                    Err(e) => errors.push(format!("topology: {e}")),
                }
            } else if let Err(e) = crate::nn::infer_chain(&network, &self.network.input_shape) {
                errors.push(format!("network: {e}"));
            } else if !network.last().is_some_and(LayerSpec::is_loss) {
                errors.push("network: the last layer must be softmax_ce".into());
            }
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        Ok(Resolved {
            name: self.run_name(),
            method: self.method,
            topology,
            plan,
            network,
            train,
            epochs: h.epochs,
            transport,
            vertical,
        })
    }
}
