use std::collections::HashSet;
use std::fmt;

use super::{PartitionPlan, RoleKind, TopologyKind};

/// One broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// The plan element at fault (a role, segment or layer name).
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Checks every plan invariant and returns all violations found.
pub fn validate_plan(plan: &PartitionPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let role_kind = |id: &str| plan.role(id).map(|r| r.kind);

    let mut seen = HashSet::new();
    for role in &plan.roles {
        if !seen.insert(role.id.as_str()) {
            out.push(Violation::new(&role.id, "duplicate role id"));
        }
    }

    let mut names = HashSet::new();
    for seg in &plan.segments {
        if seg.layers.is_empty() {
            out.push(Violation::new(&seg.id, "segment has no layers"));
        }
        if seg.owners.is_empty() {
            out.push(Violation::new(&seg.id, "segment has no owner"));
        }
        for owner in &seg.owners {
            if role_kind(owner).is_none() {
                out.push(Violation::new(&seg.id, format!("owner `{owner}` is not a role")));
            }
        }
        for layer in &seg.layers {
            if !names.insert(layer.name.as_str()) {
                out.push(Violation::new(&layer.name, "duplicate layer name"));
            }
        }
    }

    let mut edges_ok = true;
    for e in &plan.edges {
        if e.from >= plan.segments.len() || e.to >= plan.segments.len() || e.from >= e.to {
            out.push(Violation::new(
                format!("edge {}->{}", e.from, e.to),
                "edges must link existing segments in forward order",
            ));
            edges_ok = false;
        }
    }
    if !edges_ok || plan.segments.is_empty() {
        if plan.segments.is_empty() {
            out.push(Violation::new("segments", "plan has no segments"));
        }
        return out;
    }

    let n = plan.segments.len();
    let terminal: Vec<usize> = (0..n)
        .filter(|&i| plan.edges.iter().all(|e| e.from != i))
        .collect();

    // Loss placement and concat arity.
    for (i, seg) in plan.segments.iter().enumerate() {
        let is_terminal = terminal.contains(&i);
        for (pos, layer) in seg.layers.iter().enumerate() {
            let last = pos + 1 == seg.layers.len();
            if layer.is_loss() && !(is_terminal && last) {
                out.push(Violation::new(
                    &layer.name,
                    "a loss may only be the last layer of a terminal segment",
                ));
            }
            if layer.is_concat() {
                let feeders = plan.inputs_of(i).len();
                if pos != 0 {
                    out.push(Violation::new(&layer.name, "concat must open its segment"));
                } else if layer.arity() != feeders {
                    out.push(Violation::new(
                        &layer.name,
                        format!(
                            "concat arity {} does not match {feeders} incoming segment(s)",
                            layer.arity()
                        ),
                    ));
                }
            }
        }
        if is_terminal && !seg.layers.last().is_some_and(|l| l.is_loss()) {
            out.push(Violation::new(&seg.id, "terminal segment must end with a loss"));
        }
        if plan.inputs_of(i).len() > 1 && !seg.layers.first().is_some_and(|l| l.is_concat()) {
            out.push(Violation::new(&seg.id, "segment with several inputs must open with a concat"));
        }
    }

    // Label placement: the owner of every loss holds labels.
    let mut loss_owners: Vec<String> = Vec::new();
    for &t in &terminal {
        for owner in &plan.segments[t].owners {
            if !loss_owners.contains(owner) {
                loss_owners.push(owner.clone());
            }
        }
    }
    let mut holders = plan.label_holders.clone();
    holders.sort();
    let mut expected = loss_owners.clone();
    expected.sort();
    if holders != expected {
        out.push(Violation::new(
            "label_holder",
            format!("labels are held by {holders:?} but losses are computed by {expected:?}"),
        ));
    }

    let clients = plan.data_clients();
    for c in &clients {
        if role_kind(c) != Some(RoleKind::Client) {
            out.push(Violation::new(c, "data holder must be a client role"));
        }
    }
    let owner_kind = |seg: usize| {
        plan.segments[seg]
            .owners
            .first()
            .and_then(|o| role_kind(o))
    };
    let single_server = |seg: usize| {
        plan.segments[seg].owners.len() == 1 && owner_kind(seg) == Some(RoleKind::Server)
    };
    let chain = plan.edges.len() + 1 == n
        && plan.edges.iter().enumerate().all(|(i, e)| e.from == i && e.to == i + 1);

    match plan.kind {
        TopologyKind::Vanilla
        | TopologyKind::UShaped
        | TopologyKind::ExtendedVanilla
        | TopologyKind::MultiHop => {
            if !chain {
                out.push(Violation::new("edges", "horizontal topologies form a single chain"));
            }
            if plan.segments[0].owners != clients {
                out.push(Violation::new(
                    &plan.segments[0].id,
                    "the first segment belongs to the data clients",
                ));
            }
            if !matches!(plan.input, super::InputLayout::Samples(_)) {
                out.push(Violation::new("input", "horizontal topologies take whole samples"));
            }
        }
        TopologyKind::Vertical | TopologyKind::MultiTask => {
            if clients.len() < 2 {
                out.push(Violation::new("clients", "at least 2 client branches are required"));
            }
            for (i, c) in clients.iter().enumerate() {
                if plan.segments.get(i).map(|s| &s.owners) != Some(&vec![c.clone()]) {
                    out.push(Violation::new(c, "each client owns exactly its own branch"));
                }
            }
            match &plan.input {
                super::InputLayout::Columns(w) if w.len() == clients.len() => {}
                _ => out.push(Violation::new("input", "one feature width per client is required")),
            }
        }
    }

    match plan.kind {
        TopologyKind::Vanilla => {
            if n != 2 || !single_server(1) {
                out.push(Violation::new(
                    "segments",
                    "vanilla is one client segment feeding one server segment",
                ));
            }
        }
        TopologyKind::UShaped => {
            if n != 3 || !single_server(1) || plan.segments[2].owners != clients {
                out.push(Violation::new(
                    "segments",
                    "u-shaped is client front, server middle, client tail",
                ));
            }
            if plan
                .label_holders
                .iter()
                .any(|h| role_kind(h) != Some(RoleKind::Client))
            {
                out.push(Violation::new("label_holder", "labels must stay at client"));
            }
        }
        TopologyKind::ExtendedVanilla | TopologyKind::MultiHop => {
            let relays_ok = (1..n.saturating_sub(1)).all(|i| {
                plan.segments[i].owners.len() == 1
                    && owner_kind(i) == Some(RoleKind::Client)
                    && !clients.contains(&plan.segments[i].owners[0])
            });
            let count_ok = if plan.kind == TopologyKind::ExtendedVanilla {
                n == 3
            } else {
                n >= 3
            };
            if !count_ok || !relays_ok || !single_server(n - 1) {
                out.push(Violation::new(
                    "segments",
                    "clients feed intermediate client segment(s), then one server segment",
                ));
            }
        }
        TopologyKind::Vertical => {
            if n != clients.len() + 1 || !single_server(n - 1) {
                out.push(Violation::new(
                    "segments",
                    "vertical is one branch per client feeding one server segment",
                ));
            }
        }
        TopologyKind::MultiTask => {
            if plan.task_heads.len() < 2 {
                out.push(Violation::new("task_heads", "multitask needs at least 2 heads"));
            }
            for head in &plan.task_heads {
                let ok = head.segment < n
                    && single_server(head.segment)
                    && plan.segments[head.segment].owners[0] == head.server
                    && plan.inputs_of(head.segment).len() == clients.len();
                if !ok {
                    out.push(Violation::new(
                        &head.server,
                        "each head is a server segment fed by every client branch",
                    ));
                }
            }
        }
    }

    if out.is_empty() {
        if let Err(e) = plan.segment_shapes() {
            out.push(Violation::new("shapes", e.to_string()));
        }
    }
    out
}
