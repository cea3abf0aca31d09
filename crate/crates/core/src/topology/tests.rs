use proptest::prelude::*;

use super::*;
use crate::nn::{BranchedNet, GradMerge};
use crate::Tensor32;

fn mlp(widths: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(LayerSpec::dense(format!("fc{}", i + 1), w[0], w[1]));
    }
    layers.push(LayerSpec::loss("ce", *widths.last().unwrap()));
    layers
}

fn extras(shape: &[usize]) -> PlanExtras {
    PlanExtras {
        input_shape: shape.to_vec(),
        ..Default::default()
    }
}

fn vertical_extras() -> (Vec<LayerSpec>, PlanExtras) {
    let extras = PlanExtras {
        input_shape: vec![],
        branches: vec![
            Branch {
                feature_width: 4,
                layers: vec![LayerSpec::dense("a1", 4, 8)],
            },
            Branch {
                feature_width: 6,
                layers: vec![LayerSpec::dense("b1", 6, 8)],
            },
        ],
        heads: vec![],
    };
    let server = vec![
        LayerSpec::concat("cat", 2),
        LayerSpec::dense("s1", 16, 2),
        LayerSpec::loss("ce", 2),
    ];
    (server, extras)
}

#[test]
fn vanilla_four_layer_mlp() {
    // 4 layers + loss, cut after layer 2.
    let net = mlp(&[8, 6, 5, 4, 2]);
    let plan = build_plan(TopologyKind::Vanilla, &net, &[2], 3, &extras(&[8])).unwrap();
    assert_eq!(plan.segments.len(), 2);
    assert_eq!(plan.segments[0].layers, net[0..2].to_vec());
    assert_eq!(plan.segments[0].owners, vec!["client0", "client1", "client2"]);
    assert_eq!(plan.segments[1].layers, net[2..].to_vec());
    assert_eq!(plan.segments[1].owners, vec!["server"]);
    assert_eq!(plan.label_holders, vec!["server"]);
    assert!(validate_plan(&plan).is_empty());
    assert_eq!(plan.monolithic_equivalent(), Monolithic::Chain(net));
    assert_eq!(plan.replicated_segments(), vec![0]);
}

#[test]
fn ushaped_keeps_both_ends_at_the_client() {
    let net = mlp(&[8, 7, 6, 5, 4, 2]);
    let plan = build_plan(TopologyKind::UShaped, &net, &[2, 4], 2, &extras(&[8])).unwrap();
    assert_eq!(plan.segments[0].layers, net[0..2].to_vec());
    assert_eq!(plan.segments[1].layers, net[2..4].to_vec());
    assert_eq!(plan.segments[1].owners, vec!["server"]);
    assert_eq!(plan.segments[2].layers, net[4..].to_vec());
    assert!(plan.segments[2].has_loss());
    assert_eq!(plan.segments[2].owners, plan.data_clients());
    assert_eq!(plan.label_holders, plan.data_clients());
    assert_eq!(plan.monolithic_equivalent(), Monolithic::Chain(net));
    assert_eq!(plan.replicated_segments(), vec![0, 2]);
}

#[test]
fn vertical_plan_shapes_check_with_a_dummy_batch() {
    let (server, extras) = vertical_extras();
    let plan = build_plan(TopologyKind::Vertical, &server, &[], 2, &extras).unwrap();
    assert_eq!(plan.segments.len(), 3);
    assert_eq!(plan.segments[2].layers[0].arity(), 2);
    let shapes = plan.segment_shapes().unwrap();
    assert_eq!(shapes[2].inputs, vec![vec![8], vec![8]]);

    let Monolithic::Branched { branches, heads } = plan.monolithic_equivalent() else {
        panic!("vertical plans are branched");
    };
    let net = BranchedNet::<f32>::init(&branches, &heads, GradMerge::Sum, 1).unwrap();
    let xa = Tensor32::zeros(vec![1, 4]).unwrap();
    let xb = Tensor32::zeros(vec![1, 6]).unwrap();
    let out = net.evaluate(&[xa, xb], &[&[0]]).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn vertical_concat_arity_mismatch_names_the_layer() {
    let (server, extras) = vertical_extras();
    let mut plan = build_plan(TopologyKind::Vertical, &server, &[], 2, &extras).unwrap();
    plan.segments[2].layers[0] = LayerSpec::concat("cat", 3);
    let violations = validate_plan(&plan);
    assert!(violations.iter().any(|v| v.subject == "cat"), "{violations:?}");
}

#[test]
fn ushaped_with_server_labels_is_rejected() {
    let net = mlp(&[8, 7, 6, 5, 4, 2]);
    let mut plan = build_plan(TopologyKind::UShaped, &net, &[2, 4], 1, &extras(&[8])).unwrap();
    plan.label_holders = vec!["server".into()];
    let violations = validate_plan(&plan);
    assert!(violations
        .iter()
        .any(|v| v.message == "labels must stay at client"));
}

#[test]
fn validate_reports_every_violation() {
    let net = mlp(&[4, 3, 2]);
    let mut plan = build_plan(TopologyKind::Vanilla, &net, &[1], 1, &extras(&[4])).unwrap();
    plan.segments[1].layers.pop();
    plan.segments[0].layers[0].name = "fc2".into();
    plan.roles.push(Role::new("client0", RoleKind::Client));
    let violations = validate_plan(&plan);
    assert!(violations.len() >= 3, "{violations:?}");
}

#[test]
fn multitask_has_one_network_per_head() {
    let (_, mut extras) = vertical_extras();
    extras.heads = vec![
        vec![
            LayerSpec::concat("cat0", 2),
            LayerSpec::dense("h0", 16, 2),
            LayerSpec::loss("ce0", 2),
        ],
        vec![
            LayerSpec::concat("cat1", 2),
            LayerSpec::dense("h1", 16, 3),
            LayerSpec::loss("ce1", 3),
        ],
    ];
    let plan = build_plan(TopologyKind::MultiTask, &[], &[], 2, &extras).unwrap();
    assert_eq!(plan.task_heads.len(), 2);
    assert_eq!(plan.label_holders, vec!["server0", "server1"]);
    let nets = plan.monolithic_equivalent().per_task();
    assert_eq!(nets.len(), 2);
    for (t, net) in nets.iter().enumerate() {
        let Monolithic::Branched { branches, heads } = net else {
            panic!()
        };
        assert_eq!(branches.len(), 2);
        assert_eq!(heads, &vec![extras.heads[t].clone()]);
    }
}

#[test]
fn build_errors() {
    let net = mlp(&[4, 3, 3, 2]);
    let ex = extras(&[4]);
    assert!(matches!(
        build_plan(TopologyKind::Vanilla, &net, &[1, 2], 1, &ex),
        Err(TopologyError::CutCount { .. })
    ));
    assert!(matches!(
        build_plan(TopologyKind::UShaped, &net, &[2, 1], 1, &ex),
        Err(TopologyError::InvalidCut { .. })
    ));
    assert!(matches!(
        build_plan(TopologyKind::Vanilla, &net, &[0], 1, &ex),
        Err(TopologyError::InvalidCut { .. })
    ));
    assert!(matches!(
        build_plan(TopologyKind::Vanilla, &net, &[4], 1, &ex),
        Err(TopologyError::InvalidCut { .. })
    ));
    let (server, extras) = vertical_extras();
    assert!(matches!(
        build_plan(TopologyKind::Vertical, &server, &[], 3, &extras),
        Err(TopologyError::Arity { .. })
    ));
    let bad_server = vec![
        LayerSpec::concat("cat", 3),
        LayerSpec::dense("s1", 16, 2),
        LayerSpec::loss("ce", 2),
    ];
    assert!(matches!(
        build_plan(TopologyKind::Vertical, &bad_server, &[], 2, &extras),
        Err(TopologyError::Arity { expected: 2, got: 3, .. })
    ));
    // Shape-incompatible cut.
    let broken = vec![
        LayerSpec::dense("a", 4, 3),
        LayerSpec::dense("b", 5, 2),
        LayerSpec::loss("ce", 2),
    ];
    assert!(matches!(
        build_plan(TopologyKind::Vanilla, &broken, &[1], 1, &ex),
        Err(TopologyError::Invalid(_))
    ));
}

#[test]
fn multihop_and_extended_roles() {
    let net = mlp(&[6, 5, 4, 3, 2]);
    let ex = extras(&[6]);
    let plan = build_plan(TopologyKind::MultiHop, &net, &[1, 2, 3], 1, &ex).unwrap();
    let owners: Vec<_> = plan.segments.iter().map(|s| s.owners[0].as_str()).collect();
    assert_eq!(owners, vec!["client0", "relay1", "relay2", "server"]);
    let plan = build_plan(TopologyKind::ExtendedVanilla, &net, &[1, 3], 2, &ex).unwrap();
    assert_eq!(plan.segments[1].owners, vec!["relay1"]);
    assert!(build_plan(TopologyKind::ExtendedVanilla, &net, &[1, 2, 3], 2, &ex).is_err());
}

#[test]
fn kind_names_round_trip() {
    for k in TopologyKind::ALL {
        assert_eq!(k.as_str().parse::<TopologyKind>().unwrap(), k);
    }
    assert!("ring".parse::<TopologyKind>().is_err());
}

fn chain_case() -> impl Strategy<Value = (TopologyKind, Vec<usize>, Vec<usize>, usize)> {
    (3usize..8, 1usize..4).prop_flat_map(|(depth, clients)| {
        let widths = proptest::collection::vec(1usize..6, depth + 1);
        let kind = prop_oneof![
            Just(TopologyKind::Vanilla),
            Just(TopologyKind::UShaped),
            Just(TopologyKind::ExtendedVanilla),
            Just(TopologyKind::MultiHop),
        ];
        let cuts = proptest::sample::subsequence((1..depth).collect::<Vec<_>>(), 1..depth);
        (kind, widths, cuts, Just(clients))
    })
}

proptest! {
    #[test]
    fn chain_round_trip((kind, mut widths, cuts, clients) in chain_case()) {
        let wanted = match kind {
            TopologyKind::Vanilla => 1,
            TopologyKind::MultiHop => cuts.len().max(2),
            _ => 2,
        };
        prop_assume!(cuts.len() >= wanted);
        let cuts: Vec<usize> = cuts.into_iter().take(wanted).collect();
        *widths.last_mut().unwrap() = 2;
        let net = mlp(&widths);
        let plan = build_plan(kind, &net, &cuts, clients, &extras(&[widths[0]])).unwrap();
        prop_assert!(validate_plan(&plan).is_empty());
        prop_assert_eq!(plan.monolithic_equivalent(), Monolithic::Chain(net.clone()));
        let placed: usize = plan.segments.iter().map(|s| s.layers.len()).sum();
        prop_assert_eq!(placed, net.len());
    }
}
