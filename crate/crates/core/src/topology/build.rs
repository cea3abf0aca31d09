use super::{
    validate_plan, Edge, InputLayout, PartitionPlan, Role, RoleKind, Segment, TaskHead,
    TopologyError, TopologyKind,
};
use crate::nn::LayerSpec;

/// One client's slice of a vertically partitioned input and the layers it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub feature_width: usize,
    pub layers: Vec<LayerSpec>,
}

/// Topology-specific inputs to [`build_plan`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanExtras {
    /// Per-sample input shape for horizontal topologies.
    pub input_shape: Vec<usize>,
    /// Client branches for `Vertical` and `MultiTask`.
    pub branches: Vec<Branch>,
    /// Task heads for `MultiTask`; each starts with a concat and ends with a loss.
    pub heads: Vec<Vec<LayerSpec>>,
}

/// Builds and validates a plan.
///
/// `cut_points` count layers: a cut at `k` puts the first `k` layers of
/// `full_network` before the cut. Horizontal topologies replicate every
/// client-held segment across `num_clients` data clients. `Vertical` reads its
/// client branches from `extras` and uses `full_network` as the server segment
/// (starting with a concat); `MultiTask` reads both branches and heads from
/// `extras`.
pub fn build_plan(
    kind: TopologyKind,
    full_network: &[LayerSpec],
    cut_points: &[usize],
    num_clients: usize,
    extras: &PlanExtras,
) -> Result<PartitionPlan, TopologyError> {
    if num_clients == 0 {
        return Err(TopologyError::Input("at least one client is required".into()));
    }
    let plan = match kind {
        TopologyKind::Vanilla
        | TopologyKind::UShaped
        | TopologyKind::ExtendedVanilla
        | TopologyKind::MultiHop => chain_plan(kind, full_network, cut_points, num_clients, extras)?,
        TopologyKind::Vertical | TopologyKind::MultiTask => {
            branched_plan(kind, full_network, cut_points, num_clients, extras)?
        }
    };
    let violations = validate_plan(&plan);
    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(TopologyError::Invalid(violations))
    }
}

fn chain_plan(
    kind: TopologyKind,
    net: &[LayerSpec],
    cuts: &[usize],
    num_clients: usize,
    extras: &PlanExtras,
) -> Result<PartitionPlan, TopologyError> {
    let expected = match kind {
        TopologyKind::Vanilla => (1, 1, "exactly 1"),
        TopologyKind::UShaped | TopologyKind::ExtendedVanilla => (2, 2, "exactly 2"),
        _ => (2, usize::MAX, "at least 2"),
    };
    if cuts.len() < expected.0 || cuts.len() > expected.1 {
        return Err(TopologyError::CutCount {
            kind,
            expected: expected.2,
            got: cuts.len(),
        });
    }
    let invalid = |reason: &str| TopologyError::InvalidCut {
        cuts: cuts.to_vec(),
        len: net.len(),
        reason: reason.to_string(),
    };
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("cut points must be strictly increasing"));
    }
    if cuts[0] == 0 || *cuts.last().unwrap() >= net.len() {
        return Err(invalid("every segment needs at least one layer and the loss stays last"));
    }
    if extras.input_shape.is_empty() {
        return Err(TopologyError::Input("horizontal topologies need an input shape".into()));
    }

    let clients: Vec<String> = (0..num_clients).map(|i| format!("client{i}")).collect();
    let mut roles: Vec<Role> = clients
        .iter()
        .map(|c| Role::new(c.clone(), RoleKind::Client))
        .collect();
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(net.len());
    let pieces: Vec<Vec<LayerSpec>> = bounds.windows(2).map(|w| net[w[0]..w[1]].to_vec()).collect();

    let owners: Vec<Vec<String>> = match kind {
        TopologyKind::Vanilla => vec![clients.clone(), vec!["server".into()]],
        TopologyKind::UShaped => vec![clients.clone(), vec!["server".into()], clients.clone()],
        _ => {
            let relays = pieces.len() - 2;
            let mut owners = vec![clients.clone()];
            for r in 1..=relays {
                let id = format!("relay{r}");
                roles.push(Role::new(id.clone(), RoleKind::Client));
                owners.push(vec![id]);
            }
            owners.push(vec!["server".into()]);
            owners
        }
    };
    roles.push(Role::new("server", RoleKind::Server));
    roles.push(Role::new("coordinator", RoleKind::Coordinator));

    let names = ["front", "middle", "tail"];
    let segments: Vec<Segment> = pieces
        .into_iter()
        .zip(owners)
        .enumerate()
        .map(|(i, (layers, owners))| Segment {
            id: match kind {
                TopologyKind::UShaped => names[i].to_string(),
                _ => owners
                    .first()
                    .filter(|_| owners.len() == 1)
                    .cloned()
                    .unwrap_or_else(|| "clients".into()),
            },
            layers,
            owners,
        })
        .collect();
    let edges = (1..segments.len())
        .map(|i| Edge { from: i - 1, to: i })
        .collect();
    let label_holders = match kind {
        TopologyKind::UShaped => clients,
        _ => vec!["server".into()],
    };
    Ok(PartitionPlan {
        kind,
        roles,
        segments,
        edges,
        label_holders,
        num_clients,
        task_heads: Vec::new(),
        input: InputLayout::Samples(extras.input_shape.clone()),
    })
}

fn branched_plan(
    kind: TopologyKind,
    net: &[LayerSpec],
    cuts: &[usize],
    num_clients: usize,
    extras: &PlanExtras,
) -> Result<PartitionPlan, TopologyError> {
    if !cuts.is_empty() {
        return Err(TopologyError::CutCount {
            kind,
            expected: "no",
            got: cuts.len(),
        });
    }
    if extras.branches.len() != num_clients {
        return Err(TopologyError::Arity {
            what: "client branches".into(),
            expected: num_clients,
            got: extras.branches.len(),
        });
    }
    if num_clients < 2 {
        return Err(TopologyError::Arity {
            what: format!("{kind} clients"),
            expected: 2,
            got: num_clients,
        });
    }
    let heads: Vec<Vec<LayerSpec>> = match kind {
        TopologyKind::Vertical => {
            if !extras.heads.is_empty() {
                return Err(TopologyError::Input("vertical plans take no task heads".into()));
            }
            vec![net.to_vec()]
        }
        _ => {
            if !net.is_empty() {
                return Err(TopologyError::Input(
                    "multitask plans take their server layers from the task heads".into(),
                ));
            }
            if extras.heads.len() < 2 {
                return Err(TopologyError::Arity {
                    what: "task heads".into(),
                    expected: 2,
                    got: extras.heads.len(),
                });
            }
            extras.heads.clone()
        }
    };
    for head in &heads {
        let arity = head.first().filter(|l| l.is_concat()).map(LayerSpec::arity);
        if arity != Some(num_clients) {
            return Err(TopologyError::Arity {
                what: format!(
                    "concat `{}` inputs",
                    head.first().map(|l| l.name.as_str()).unwrap_or("?")
                ),
                expected: num_clients,
                got: arity.unwrap_or(0),
            });
        }
    }

    let mut roles: Vec<Role> = (0..num_clients)
        .map(|i| Role::new(format!("client{i}"), RoleKind::Client))
        .collect();
    let mut segments: Vec<Segment> = extras
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| Segment {
            id: format!("client{i}"),
            layers: b.layers.clone(),
            owners: vec![format!("client{i}")],
        })
        .collect();
    let servers: Vec<String> = match kind {
        TopologyKind::Vertical => vec!["server".into()],
        _ => (0..heads.len()).map(|t| format!("server{t}")).collect(),
    };
    let mut edges = Vec::new();
    let mut task_heads = Vec::new();
    for (server, head) in servers.iter().zip(heads) {
        let idx = segments.len();
        roles.push(Role::new(server.clone(), RoleKind::Server));
        segments.push(Segment {
            id: server.clone(),
            layers: head,
            owners: vec![server.clone()],
        });
        edges.extend((0..num_clients).map(|from| Edge { from, to: idx }));
        if kind == TopologyKind::MultiTask {
            task_heads.push(TaskHead {
                server: server.clone(),
                segment: idx,
            });
        }
    }
    roles.push(Role::new("coordinator", RoleKind::Coordinator));
    Ok(PartitionPlan {
        kind,
        roles,
        segments,
        edges,
        label_holders: servers,
        num_clients,
        task_heads,
        input: InputLayout::Columns(extras.branches.iter().map(|b| b.feature_width).collect()),
    })
}
