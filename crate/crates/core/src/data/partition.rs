use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::{DataError, Dataset, Shard};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizontalStrategy {
    /// Shuffle, then cut into contiguous shards whose sizes differ by at most one.
    Equal,
    /// Per-class client proportions drawn from Dirichlet(alpha).
    Dirichlet { alpha: f64 },
}

/// Splits rows across clients. Shards are disjoint and cover every row.
pub fn partition_horizontal(
    data: &Dataset,
    clients: usize,
    strategy: HorizontalStrategy,
    seed: u64,
) -> Result<Vec<Shard>, DataError> {
    if clients == 0 || clients > data.len() {
        return Err(DataError::TooManyClients {
            samples: data.len(),
            clients,
        });
    }
    let mut rng = SplitMix64::for_stream(seed, "partition");
    let rows: Vec<Vec<usize>> = match strategy {
        HorizontalStrategy::Equal => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let base = data.len() / clients;
            let extra = data.len() % clients;
            let mut start = 0;
            (0..clients)
                .map(|c| {
                    let size = base + usize::from(c < extra);
                    let shard = order[start..start + size].to_vec();
                    start += size;
                    shard
                })
                .collect()
        }
        HorizontalStrategy::Dirichlet { alpha } => {
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| {
                DataError::Invalid(format!("dirichlet alpha {alpha}: {e}"))
            })?;
            let mut shards = vec![Vec::new(); clients];
            for class in 0..data.num_classes[0] {
                let mut members: Vec<usize> = (0..data.len())
                    .filter(|&i| data.labels()[i] as usize == class)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(&mut rng);
                let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let mut cumulative = 0.0;
                let mut start = 0;
                for (c, d) in draws.iter().enumerate() {
                    cumulative += d;
                    let end = if c + 1 == clients || total == 0.0 {
                        members.len()
                    } else {
                        ((cumulative / total) * members.len() as f64).floor() as usize
                    };
                    let end = end.clamp(start, members.len());
                    shards[c].extend_from_slice(&members[start..end]);
                    start = end;
                }
            }
            shards
        }
    };
    Ok(rows
        .into_iter()
        .map(|r| Shard::from_rows(data, r))
        .collect())
}

/// Splits feature columns across clients, keeping row order. Every shard
/// carries all label vectors; the engine hands them only to label holders.
pub fn partition_vertical(data: &Dataset, widths: &[usize]) -> Result<Vec<Shard>, DataError> {
    let shape = data.features.shape();
    if shape.len() != 2 || widths.iter().sum::<usize>() != shape[1] || widths.contains(&0) {
        return Err(DataError::Widths {
            widths: widths.to_vec(),
            features: data.features.sample_len(),
        });
    }
    let parts = data
        .features
        .split_axis1(widths)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(parts
        .into_iter()
        .map(|features| {
            Dataset {
                features,
                tasks: data.tasks.clone(),
                num_classes: data.num_classes.clone(),
            }
            .as_shard()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, SyntheticSpec};

    #[test]
    fn equal_sizes() {
        let d = synthetic(&SyntheticSpec::new(10, 2, 2, 1)).unwrap();
        let shards = partition_horizontal(&d, 3, HorizontalStrategy::Equal, 5).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Shard::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn too_many_clients() {
        let d = synthetic(&SyntheticSpec::new(3, 2, 2, 1)).unwrap();
        assert!(matches!(
            partition_horizontal(&d, 4, HorizontalStrategy::Equal, 0),
            Err(DataError::TooManyClients { samples: 3, clients: 4 })
        ));
    }
}
