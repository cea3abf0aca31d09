mod common;

use common::*;
use splitnn::data::Shard;
use splitnn::engine::{
    average_weights, FederatedSession, LargeBatchSession, SplitSession, TrainConfig,
    TransportKind, WeightSyncMode,
};
use splitnn::nn::{BranchedNet, GradMerge, Sequential};
use splitnn::protocol::FrameType;
use splitnn::topology::{Monolithic, TopologyKind};
use splitnn::Tensor32;

fn cfg(batch: usize, lr: f32) -> TrainConfig {
    TrainConfig {
        batch,
        lr,
        seed: 11,
        ..Default::default()
    }
}

fn session(kind: TopologyKind, shards: Vec<Shard>, c: TrainConfig) -> SplitSession {
    let clients = shards.len();
    SplitSession::new(plan(kind, clients, 16), shards, c, TransportKind::InProcess).unwrap()
}

#[test]
fn zero_step_size_leaves_weights_and_matches_untrained_losses() {
    let data = blobs(48, 10, 2, 3);
    let mut s = session(TopologyKind::Vanilla, vec![data.as_shard()], cfg(16, 0.0));
    let before: Vec<_> = (0..2).map(|seg| s.segment_weights(seg, 0)).collect();
    let reports = s.run_epoch().unwrap();
    assert_eq!(reports.len(), 3);
    let mono = Sequential::<f32>::init(&monolithic_chain(s.plan()), 11).unwrap();
    let shard = data.as_shard();
    for (r, rows) in reports.iter().zip(shard.batches(16)) {
        let expect = mono
            .evaluate(&shard.features(rows.clone()), shard.labels(0, rows))
            .unwrap();
        assert_eq!(r.losses[0], expect.loss);
    }
    for (seg, w) in before.iter().enumerate() {
        assert_eq!(&s.segment_weights(seg, 0), w);
    }
}

#[test]
fn vanilla_tracks_monolithic_for_fifty_steps() {
    let data = blobs(200, 10, 2, 5);
    let shard = data.as_shard();
    let mut s = session(TopologyKind::Vanilla, vec![shard.clone()], cfg(16, 0.1));
    let mut mono = Sequential::<f32>::init(&monolithic_chain(s.plan()), 11).unwrap();
    let mut steps = 0;
    while steps < 50 {
        let reports = s.run_epoch().unwrap();
        for (r, rows) in reports.iter().zip(shard.batches(16)) {
            let m = mono
                .train_step(&shard.features(rows.clone()), shard.labels(0, rows), 0.1)
                .unwrap();
            assert!((r.losses[0] - m.loss).abs() <= 1e-5, "step {}", r.step);
            steps += 1;
        }
    }
}

#[test]
fn ushaped_sends_no_labels() {
    let data = blobs(60, 10, 2, 1);
    let mut s = session(TopologyKind::UShaped, vec![data.as_shard()], cfg(16, 0.05));
    s.fabric_mut().record_transcript(true);
    s.run_epoch().unwrap();
    s.evaluate().unwrap();
    assert!(!s.fabric().transcript().is_empty());
    assert_eq!(s.fabric().count_frames(FrameType::Labels), 0);
    assert!(s.fabric().count_frames(FrameType::Logits) > 0);
}

#[test]
fn vanilla_sends_labels_once_per_step() {
    let data = blobs(64, 10, 2, 1);
    let mut s = session(TopologyKind::Vanilla, vec![data.as_shard()], cfg(16, 0.05));
    s.fabric_mut().record_transcript(true);
    s.run_epoch().unwrap();
    assert_eq!(s.fabric().count_frames(FrameType::Labels), 4);
}

#[test]
fn round_robin_matches_single_client_on_interleaved_shard() {
    let data = blobs(32, 10, 2, 9);
    let half: Vec<usize> = (0..32).collect();
    let two = shards_by_rows(&data, &[half.clone(), half.clone()]);
    let interleaved: Vec<usize> = (0..4)
        .flat_map(|b| {
            let rows: Vec<usize> = (b * 8..b * 8 + 8).collect();
            [rows.clone(), rows].concat()
        })
        .collect();
    let one = shards_by_rows(&data, &[interleaved]);

    let mut a = session(TopologyKind::Vanilla, two, cfg(8, 0.1));
    let mut b = session(TopologyKind::Vanilla, one, cfg(8, 0.1));
    for _ in 0..2 {
        a.run_epoch().unwrap();
        b.run_epoch().unwrap();
    }
    let last = a.active_client().unwrap();
    assert_eq!(a.client_weights(last), b.client_weights(0));
    assert_eq!(a.segment_weights(1, 0), b.segment_weights(1, 0));
}

#[test]
fn three_clients_one_batch_each_hand_off_twice_in_the_first_epoch() {
    let data = blobs(24, 10, 2, 2);
    let rows: Vec<Vec<usize>> = (0..3).map(|c| (c * 8..c * 8 + 8).collect()).collect();
    let mut s = session(TopologyKind::Vanilla, shards_by_rows(&data, &rows), cfg(8, 0.1));
    let first = s.run_epoch().unwrap();
    assert_eq!(first.iter().filter(|r| r.handoff).count(), 2);
    let second = s.run_epoch().unwrap();
    assert_eq!(second.iter().filter(|r| r.handoff).count(), 3);
}

#[test]
fn handoff_copies_weights_bit_for_bit() {
    let data = blobs(40, 10, 2, 2);
    let rows: Vec<Vec<usize>> = vec![(0..20).collect(), (20..40).collect()];
    for mode in [WeightSyncMode::ServerMediated, WeightSyncMode::PeerToPeer] {
        let mut c = cfg(10, 0.1);
        c.weight_sync = mode;
        let mut s = session(TopologyKind::UShaped, shards_by_rows(&data, &rows), c);
        s.fabric_mut().record_transcript(true);
        s.run_epoch().unwrap();
        // Last step ran on client1, right after receiving client0's weights
        // and training once; train client0 -> sync happens on the next epoch.
        s.run_epoch().unwrap();
        assert!(s.fabric().count_frames(FrameType::Weights) > 0);
        let weights: Vec<_> = s
            .fabric()
            .transcript()
            .iter()
            .filter(|e| e.frame.frame_type() == FrameType::Weights)
            .collect();
        if mode == WeightSyncMode::ServerMediated {
            assert!(weights.iter().all(|e| e.from == "coordinator" || e.to == "coordinator"));
        } else {
            assert!(weights.iter().all(|e| e.from.starts_with("client") && e.to.starts_with("client")));
        }
    }
}

#[test]
fn weights_agree_immediately_after_handoff() {
    let data = blobs(40, 10, 2, 4);
    let rows: Vec<Vec<usize>> = vec![(0..20).collect(), (20..40).collect()];
    let mut c = cfg(20, 0.1);
    c.weight_sync = WeightSyncMode::PeerToPeer;
    // lr 0 on the receiving side is not possible, so compare the sync payload
    // with the sender's weights at the time of sending instead.
    let mut s = session(TopologyKind::Vanilla, shards_by_rows(&data, &rows), c);
    s.fabric_mut().record_transcript(true);
    s.run_epoch().unwrap();
    let sent = s
        .fabric()
        .transcript()
        .iter()
        .find(|e| e.frame.frame_type() == FrameType::Weights)
        .unwrap()
        .frame
        .message
        .tensors()
        .to_vec();
    // Client0 trained exactly once and did not train again afterwards.
    assert_eq!(sent, s.client_weights(0));
}

#[test]
fn sync_off_lets_clients_diverge() {
    let data = blobs(40, 10, 2, 2);
    let rows: Vec<Vec<usize>> = vec![(0..20).collect(), (20..40).collect()];
    let mut c = cfg(10, 0.1);
    c.weight_sync = WeightSyncMode::Off;
    let mut s = session(TopologyKind::Vanilla, shards_by_rows(&data, &rows), c);
    s.fabric_mut().record_transcript(true);
    s.run_epoch().unwrap();
    assert_eq!(s.fabric().count_frames(FrameType::Weights), 0);
    assert_ne!(s.client_weights(0), s.client_weights(1));
}

#[test]
fn short_last_turn_is_flagged() {
    let data = blobs(50, 10, 2, 2);
    let rows: Vec<Vec<usize>> = vec![(0..30).collect(), (30..50).collect()];
    let mut c = cfg(10, 0.1);
    c.batches_per_turn = 2;
    let mut s = session(TopologyKind::Vanilla, shards_by_rows(&data, &rows), c);
    let reports = s.run_epoch().unwrap();
    let order: Vec<_> = reports.iter().map(|r| r.active_client.unwrap()).collect();
    assert_eq!(order, vec![0, 0, 1, 1, 0]);
    assert!(reports[4].turn_ended_early);
    assert_eq!(reports.iter().filter(|r| r.turn_ended_early).count(), 1);
}

#[test]
fn vertical_tracks_branched_oracle() {
    let data = blobs(64, 10, 2, 8);
    let shards = splitnn::data::partition_vertical(&data, &WIDTHS).unwrap();
    let mut s = SplitSession::new(
        plan(TopologyKind::Vertical, 2, 16),
        shards.clone(),
        cfg(16, 0.1),
        TransportKind::InProcess,
    )
    .unwrap();
    let Monolithic::Branched { branches, heads } = s.plan().monolithic_equivalent() else {
        panic!("branched")
    };
    let mut mono = BranchedNet::<f32>::init(&branches, &heads, GradMerge::Sum, 11).unwrap();
    let reports = s.run_epoch().unwrap();
    for (r, rows) in reports.iter().zip(shards[0].batches(16)) {
        let xs: Vec<Tensor32> = shards.iter().map(|sh| sh.features(rows.clone())).collect();
        let out = mono.train_step(&xs, &[data.labels()[rows].as_ref()], 0.1).unwrap();
        assert!((r.losses[0] - out[0].loss).abs() <= 1e-5);
    }
}

#[test]
fn split_evaluate_equals_monolithic_evaluate() {
    let data = blobs(90, 10, 2, 6);
    let mut s = session(TopologyKind::MultiHop, vec![data.as_shard()], cfg(32, 0.1));
    s.run_epoch().unwrap();
    let mut mono = Sequential::<f32>::init(&monolithic_chain(s.plan()), 11).unwrap();
    let weights: Vec<_> = (0..s.plan().segments.len())
        .flat_map(|seg| s.segment_weights(seg, 0))
        .collect();
    mono.set_weights(weights).unwrap();
    let before = s.fabric().ledgers().to_vec();
    let eval = s.evaluate().unwrap();
    assert_eq!(s.fabric().ledgers(), &before[..]);
    let mono_eval = mono.evaluate(&data.features, data.labels()).unwrap();
    assert_eq!(eval.correct[0], mono_eval.correct);
    assert_eq!(eval.total, 90);
}

#[test]
fn untrained_accuracy_is_near_chance() {
    for seed in 0..10 {
        let mut spec = splitnn::data::SyntheticSpec::new(1000, 10, 2, seed);
        spec.separation = 0.0;
        let data = splitnn::data::synthetic(&spec).unwrap();
        let mut c = cfg(100, 0.0);
        c.seed = seed;
        let mut s = session(TopologyKind::Vanilla, vec![data.as_shard()], c);
        let acc = s.evaluate().unwrap().accuracy();
        assert!((0.40..=0.60).contains(&acc), "seed {seed}: {acc}");
    }
}

#[test]
fn separable_toy_set_is_learned_perfectly() {
    let mut spec = splitnn::data::SyntheticSpec::new(200, 10, 2, 3);
    spec.separation = 6.0;
    let data = splitnn::data::synthetic(&spec).unwrap();
    let mut s = session(TopologyKind::Vanilla, vec![data.as_shard()], cfg(20, 0.1));
    for _ in 0..10 {
        s.run_epoch().unwrap();
    }
    assert_eq!(s.evaluate().unwrap().accuracy(), 1.0);
}

#[test]
fn weighted_average_examples() {
    let one = |v: f32| vec![Tensor32::new(vec![1], vec![v]).unwrap()];
    assert_eq!(average_weights(&[(one(1.0), 10), (one(4.0), 30)]), one(3.25));
    assert_eq!(average_weights(&[(one(0.7), 3), (one(0.7), 9)]), one(0.7));
}

fn baseline_net() -> Vec<splitnn::nn::LayerSpec> {
    mlp("", &[10, 16, 2])
}

#[test]
fn single_client_baselines_equal_plain_sgd() {
    let data = blobs(64, 10, 2, 12);
    let shard = data.as_shard();
    let c = cfg(16, 0.1);
    let mut fed =
        FederatedSession::new(&baseline_net(), &[10], vec![shard.clone()], c, TransportKind::InProcess)
            .unwrap();
    let mut lb =
        LargeBatchSession::new(&baseline_net(), &[10], vec![shard.clone()], c, TransportKind::InProcess)
            .unwrap();
    let mut plain = Sequential::<f32>::init(&baseline_net(), 11).unwrap();
    for _ in 0..2 {
        let f = fed.run_round().unwrap();
        let l = lb.run_epoch().unwrap();
        for ((fr, lr), rows) in f.iter().zip(&l).zip(shard.batches(16)) {
            let p = plain
                .train_step(&shard.features(rows.clone()), shard.labels(0, rows), 0.1)
                .unwrap();
            assert_eq!(fr.losses[0], p.loss);
            assert_eq!(lr.losses[0], p.loss);
        }
    }
    assert_eq!(fed.global_weights(), plain.weights());
    assert_eq!(lb.global_weights(), plain.weights());
    assert_eq!(fed.client_weights(0), plain.weights());
}

#[test]
fn identical_large_batch_clients_equal_one() {
    let data = blobs(32, 10, 2, 12);
    let shard = data.as_shard();
    let c = cfg(16, 0.1);
    let mut three = LargeBatchSession::new(
        &baseline_net(),
        &[10],
        vec![shard.clone(), shard.clone(), shard.clone()],
        c,
        TransportKind::InProcess,
    )
    .unwrap();
    let mut one =
        LargeBatchSession::new(&baseline_net(), &[10], vec![shard], c, TransportKind::InProcess).unwrap();
    three.run_epoch().unwrap();
    one.run_epoch().unwrap();
    assert_eq!(three.global_weights(), one.global_weights());
}

#[test]
fn large_batch_with_zero_step_size_still_moves_gradients() {
    let data = blobs(32, 10, 2, 1);
    let rows: Vec<Vec<usize>> = vec![(0..16).collect(), (16..32).collect()];
    let mut s = LargeBatchSession::new(
        &baseline_net(),
        &[10],
        shards_by_rows(&data, &rows),
        cfg(16, 0.0),
        TransportKind::InProcess,
    )
    .unwrap();
    let before = s.global_weights();
    s.run_epoch().unwrap();
    assert_eq!(s.global_weights(), before);
    let g = FrameType::Gradient.index();
    assert!(s.fabric().ledgers()[0].sent_by_type[g] > 0);
    assert!(s.fabric().ledgers()[1].sent_by_type[g] > 0);
}

#[test]
fn federated_skips_empty_shards() {
    let data = blobs(32, 10, 2, 1);
    let rows: Vec<Vec<usize>> = vec![(0..32).collect(), vec![]];
    let mut s = FederatedSession::new(
        &baseline_net(),
        &[10],
        shards_by_rows(&data, &rows),
        cfg(16, 0.1),
        TransportKind::InProcess,
    )
    .unwrap();
    let reports = s.run_round().unwrap();
    assert!(reports.iter().all(|r| r.active_client == Some(0)));
    assert_eq!(s.client_weights(1), s.global_weights());
}

#[test]
fn tcp_and_in_process_runs_agree() {
    let data = blobs(64, 10, 2, 4);
    let rows: Vec<Vec<usize>> = vec![(0..32).collect(), (32..64).collect()];
    let mut runs = Vec::new();
    for transport in [TransportKind::InProcess, TransportKind::Tcp { addresses: vec![] }] {
        let mut s = SplitSession::new(
            plan(TopologyKind::UShaped, 2, 16),
            shards_by_rows(&data, &rows),
            cfg(16, 0.1),
            transport,
        )
        .unwrap();
        let reports = s.run_epoch().unwrap();
        runs.push((reports, s.fabric().ledgers().to_vec(), s.client_weights(1)));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn step_deltas_sum_to_ledgers() {
    let data = blobs(64, 10, 2, 4);
    let rows: Vec<Vec<usize>> = vec![(0..32).collect(), (32..64).collect()];
    let mut s = session(TopologyKind::ExtendedVanilla, shards_by_rows(&data, &rows), cfg(16, 0.1));
    let reports = s.run_epoch().unwrap();
    let mut sums: Vec<_> = s
        .fabric()
        .roles()
        .iter()
        .map(splitnn::metering::ResourceLedger::new)
        .collect();
    for r in &reports {
        for (acc, d) in sums.iter_mut().zip(&r.deltas) {
            acc.absorb(d);
        }
    }
    assert_eq!(sums, s.fabric().ledgers());
    assert!(s.fabric().ledgers().iter().all(|l| l.is_consistent()));
}
