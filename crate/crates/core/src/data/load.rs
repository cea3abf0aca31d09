use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset};
use crate::rng::SplitMix64;
use crate::Tensor32;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Format {
            path: path.display().to_string(),
            offset: offset as u64,
            reason: "file ends inside the header".into(),
        })
}

/// Reads an IDX image file and its label file. Pixels are scaled to [0, 1];
/// samples have shape `[1, rows, cols]`.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let img = read(images)?;
    let lab = read(labels)?;
    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES {
        return Err(DataError::BadMagic {
            path: images.display().to_string(),
            found: magic,
            expected: IDX_IMAGES,
        });
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS {
        return Err(DataError::BadMagic {
            path: labels.display().to_string(),
            found: magic,
            expected: IDX_LABELS,
        });
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n != n_labels {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let pixels = n * rows * cols;
    if img.len() != 16 + pixels {
        return Err(DataError::Format {
            path: images.display().to_string(),
            offset: img.len().min(16 + pixels) as u64,
            reason: format!("expected {} pixel bytes after the header, found {}", pixels, img.len() - 16),
        });
    }
    if lab.len() != 8 + n {
        return Err(DataError::Format {
            path: labels.display().to_string(),
            offset: lab.len().min(8 + n) as u64,
            reason: format!("expected {n} label bytes after the header, found {}", lab.len() - 8),
        });
    }
    let values = img[16..].iter().map(|&p| p as f32 / 255.0).collect();
    let features = Tensor32::new(vec![n, 1, rows, cols], values).map_err(|e| DataError::Format {
        path: images.display().to_string(),
        offset: 4,
        reason: e.to_string(),
    })?;
    Dataset::new(features, lab[8..].iter().map(|&l| l as u16).collect())
}

/// Numeric CSV without a header; the last column is the class label.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: name.clone(),
            reason: e.to_string(),
        })?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Csv {
            path: name.clone(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cells = record.len();
        if cells < 2 {
            return Err(DataError::Csv {
                path: name.clone(),
                line,
                reason: "need at least one feature and a label".into(),
            });
        }
        if *width.get_or_insert(cells) != cells {
            return Err(DataError::Csv {
                path: name.clone(),
                line,
                reason: format!("expected {} cells, found {cells}", width.unwrap()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let bad = |kind: &str| DataError::Csv {
                path: name.clone(),
                line,
                reason: format!("column {}: `{cell}` is not {kind}", col + 1),
            };
            if col + 1 == cells {
                labels.push(cell.parse::<u16>().map_err(|_| bad("a class label"))?);
            } else {
                let v: f32 = cell.parse().map_err(|_| bad("a number"))?;
                if !v.is_finite() {
                    return Err(bad("finite"));
                }
                values.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| DataError::Csv {
        path: name.clone(),
        line: 1,
        reason: "no rows".into(),
    })?;
    let features = Tensor32::new(vec![labels.len(), width - 1], values)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(features, labels)
}

/// CIFAR-10 binary batches: each record is one label byte then 3072 bytes
/// of 32x32 RGB planes. Samples have shape `[3, 32, 32]`, scaled to [0, 1].
pub fn load_cifar_bin(path: &Path) -> Result<Dataset, DataError> {
    const RECORD: usize = 1 + 3072;
    let bytes = read(path)?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(DataError::Format {
            path: path.display().to_string(),
            offset: (bytes.len() - bytes.len() % RECORD) as u64,
            reason: format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD;
    let mut values = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(DataError::Format {
                path: path.display().to_string(),
                offset: (i * RECORD) as u64,
                reason: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as u16);
        values.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
    }
    let features = Tensor32::new(vec![n, 3, 32, 32], values).expect("whole records");
    Dataset::with_tasks(features, vec![labels], vec![10])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    pub seed: u64,
    /// Extra binary tasks; task `t` labels whether feature `(t - 1) % dims` is positive.
    pub extra_tasks: usize,
    /// Spread of the class centres relative to the unit-variance noise.
    pub separation: f32,
}

impl SyntheticSpec {
    pub fn new(n: usize, dims: usize, classes: usize, seed: u64) -> Self {
        Self {
            n,
            dims,
            classes,
            seed,
            extra_tasks: 0,
            separation: 3.0,
        }
    }
}

/// Gaussian class blobs. Sample `i` belongs to class `i % classes`.
pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if spec.n == 0 || spec.dims == 0 || spec.classes < 2 || spec.classes > u16::MAX as usize {
        return Err(DataError::Invalid(format!(
            "synthetic data needs n, dims > 0 and 2..=65535 classes, got {spec:?}"
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut gauss = || -> f32 { StandardNormal.sample(&mut rng) };
    let centres: Vec<f32> = (0..spec.classes * spec.dims)
        .map(|_| gauss() * spec.separation)
        .collect();
    let mut values = Vec::with_capacity(spec.n * spec.dims);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.classes;
        labels.push(c as u16);
        for d in 0..spec.dims {
            values.push(centres[c * spec.dims + d] + gauss());
        }
    }
    let mut tasks = vec![labels];
    let mut classes = vec![spec.classes];
    for t in 1..=spec.extra_tasks {
        let col = (t - 1) % spec.dims;
        tasks.push(
            (0..spec.n)
                .map(|i| (values[i * spec.dims + col] > 0.0) as u16)
                .collect(),
        );
        classes.push(2);
    }
    let features = Tensor32::new(vec![spec.n, spec.dims], values).expect("n * dims values");
    Dataset::with_tasks(features, tasks, classes)
}
