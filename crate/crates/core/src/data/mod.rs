//! Datasets, file loaders and client partitioning.

mod load;
mod partition;

use std::ops::Range;

use thiserror::Error;

use crate::Tensor32;

pub use load::{load_cifar_bin, load_csv, load_mnist_idx, synthetic, SyntheticSpec};
pub use partition::{partition_horizontal, partition_vertical, HorizontalStrategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: bad magic {found:#010x} at offset 0, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {reason} (offset {offset})")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}:{line}: {reason}")]
    Csv {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot split {samples} samples across {clients} clients")]
    TooManyClients { samples: usize, clients: usize },
    #[error("feature widths {widths:?} do not cover {features} features")]
    Widths { widths: Vec<usize>, features: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Samples with one label vector per task (task 0 is the primary task).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor32,
    pub tasks: Vec<Vec<u16>>,
    pub num_classes: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Tensor32, labels: Vec<u16>) -> Result<Self, DataError> {
        let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        Self::with_tasks(features, vec![labels], vec![classes])
    }

    pub fn with_tasks(
        features: Tensor32,
        tasks: Vec<Vec<u16>>,
        num_classes: Vec<usize>,
    ) -> Result<Self, DataError> {
        if tasks.is_empty() || tasks.len() != num_classes.len() {
            return Err(DataError::Invalid("one class count per task is required".into()));
        }
        for (t, labels) in tasks.iter().enumerate() {
            if labels.len() != features.batch() {
                return Err(DataError::CountMismatch {
                    images: features.batch(),
                    labels: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes[t]) {
                return Err(DataError::Invalid(format!(
                    "task {t} label {bad} exceeds {} classes",
                    num_classes[t]
                )));
            }
        }
        Ok(Self {
            features,
            tasks,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[u16] {
        &self.tasks[0]
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    /// Same samples with every feature map flattened to one row.
    pub fn flattened(&self) -> Dataset {
        let n = self.len();
        let d = self.features.sample_len();
        Dataset {
            features: self.features.clone().reshape(vec![n, d]).expect("same element count"),
            tasks: self.tasks.clone(),
            num_classes: self.num_classes.clone(),
        }
    }

    /// The whole dataset as a single shard.
    pub fn as_shard(&self) -> Shard {
        Shard {
            sample_shape: self.sample_shape().to_vec(),
            values: self.features.data().to_vec(),
            tasks: self.tasks.clone(),
            indices: (0..self.len()).collect(),
        }
    }
}

/// One client's portion of a dataset. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub sample_shape: Vec<usize>,
    values: Vec<f32>,
    pub tasks: Vec<Vec<u16>>,
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn from_rows(dataset: &Dataset, indices: Vec<usize>) -> Shard {
        let len = dataset.features.sample_len();
        let data = dataset.features.data();
        let mut values = Vec::with_capacity(indices.len() * len);
        for &i in &indices {
            values.extend_from_slice(&data[i * len..(i + 1) * len]);
        }
        Shard {
            sample_shape: dataset.sample_shape().to_vec(),
            values,
            tasks: dataset
                .tasks
                .iter()
                .map(|t| indices.iter().map(|&i| t[i]).collect())
                .collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn features(&self, rows: Range<usize>) -> Tensor32 {
        let len = self.sample_len();
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor32::new(shape, self.values[rows.start * len..rows.end * len].to_vec())
            .expect("row range inside the shard")
    }

    pub fn labels(&self, task: usize, rows: Range<usize>) -> &[u16] {
        &self.tasks[task][rows]
    }

    /// Row ranges of consecutive batches; the last one may be short.
    pub fn batches(&self, batch: usize) -> Vec<Range<usize>> {
        (0..self.len())
            .step_by(batch.max(1))
            .map(|s| s..(s + batch).min(self.len()))
            .collect()
    }
}
