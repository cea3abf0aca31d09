#![allow(dead_code)]

use splitnn::data::{synthetic, Dataset, Shard, SyntheticSpec};
use splitnn::nn::LayerSpec;
use splitnn::topology::{build_plan, Branch, Monolithic, PartitionPlan, PlanExtras, TopologyKind};

/// Dense/ReLU stack ending in a loss: `dims` are layer widths, input first.
pub fn mlp(prefix: &str, dims: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for i in 0..dims.len() - 1 {
        layers.push(LayerSpec::dense(format!("{prefix}fc{i}"), dims[i], dims[i + 1]));
        if i + 2 < dims.len() {
            layers.push(LayerSpec::relu(format!("{prefix}relu{i}")));
        }
    }
    layers.push(LayerSpec::loss(format!("{prefix}loss"), *dims.last().unwrap()));
    layers
}

pub fn blobs(n: usize, dims: usize, classes: usize, seed: u64) -> Dataset {
    synthetic(&SyntheticSpec::new(n, dims, classes, seed)).unwrap()
}

pub fn blobs_with_tasks(n: usize, dims: usize, seed: u64, extra: usize) -> Dataset {
    let mut spec = SyntheticSpec::new(n, dims, 2, seed);
    spec.extra_tasks = extra;
    synthetic(&spec).unwrap()
}

/// Cut points that give every chain topology a sensible shape on a
/// 3-layer MLP (`fc0 relu0 fc1 relu1 fc2 loss`).
pub fn cuts_for(kind: TopologyKind) -> Vec<usize> {
    match kind {
        TopologyKind::Vanilla => vec![2],
        TopologyKind::UShaped | TopologyKind::ExtendedVanilla => vec![2, 4],
        TopologyKind::MultiHop => vec![1, 2, 4],
        _ => vec![],
    }
}

pub const WIDTHS: [usize; 2] = [4, 6];

/// Client branches for a column-partitioned 10-feature input.
pub fn branches(hidden: usize) -> Vec<Branch> {
    WIDTHS
        .iter()
        .enumerate()
        .map(|(c, &w)| Branch {
            feature_width: w,
            layers: vec![
                LayerSpec::dense(format!("b{c}fc"), w, hidden),
                LayerSpec::relu(format!("b{c}relu")),
            ],
        })
        .collect()
}

pub fn head(prefix: &str, inputs: usize, hidden: usize, classes: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::concat(format!("{prefix}cat"), WIDTHS.len())];
    layers.extend(mlp(prefix, &[inputs, hidden, classes]));
    layers
}

/// A valid plan of each kind over a 10-feature, 2-class problem.
pub fn plan(kind: TopologyKind, clients: usize, hidden: usize) -> PartitionPlan {
    match kind {
        TopologyKind::Vertical => {
            let extras = PlanExtras {
                branches: branches(hidden),
                ..Default::default()
            };
            let server = head("s", 2 * hidden, hidden, 2);
            build_plan(kind, &server, &[], 2, &extras).unwrap()
        }
        TopologyKind::MultiTask => {
            let extras = PlanExtras {
                branches: branches(hidden),
                heads: vec![head("t0", 2 * hidden, hidden, 2), head("t1", 2 * hidden, hidden, 2)],
                ..Default::default()
            };
            build_plan(kind, &[], &[], 2, &extras).unwrap()
        }
        _ => {
            let extras = PlanExtras {
                input_shape: vec![10],
                ..Default::default()
            };
            build_plan(kind, &mlp("", &[10, hidden, hidden, 2]), &cuts_for(kind), clients, &extras)
                .unwrap()
        }
    }
}

pub fn monolithic_chain(plan: &PartitionPlan) -> Vec<LayerSpec> {
    match plan.monolithic_equivalent() {
        Monolithic::Chain(layers) => layers,
        other => panic!("expected a chain, got {other:?}"),
    }
}

/// Splits a dataset into per-client shards by explicit row lists.
pub fn shards_by_rows(data: &Dataset, rows: &[Vec<usize>]) -> Vec<Shard> {
    rows.iter().map(|r| Shard::from_rows(data, r.clone())).collect()
}
