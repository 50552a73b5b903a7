use std::collections::BTreeMap;
use std::time::Duration;

use proptest::prelude::*;

use swarmlearn::aggregation::ModelUpdate;
use swarmlearn::net::codec::{decode, encode, PeerInfo, WeightsBody};
use swarmlearn::net::exchange::{broadcast_weights, PeerOutcome, UpdateCollector};
use swarmlearn::net::membership::{gossip_round, join, join_with_timeout};
use swarmlearn::net::sim::{sim_addr, Fate, SimNet, SimNetConfig};
use swarmlearn::net::{
    DeliveryError, NetError, Payload, SecurityConfig, StaticKeypair, SwarmMessage, TcpTransport,
    Transport,
};
use swarmlearn::params::WeightVector;

const T: Duration = Duration::from_millis(500);

fn update(node: u32, round: u32, values: Vec<f64>) -> ModelUpdate {
    ModelUpdate {
        weights: WeightVector::from_flat(values).unwrap(),
        sample_count: 10 + u64::from(node),
        node_id: node,
        round,
        epoch: 3 * round,
    }
}

fn sim(cfg: SimNetConfig, n: u32) -> (SimNet, Vec<swarmlearn::net::SimEndpoint>) {
    let net = SimNet::new(cfg).unwrap();
    let mut eps: Vec<_> = (0..n).map(|i| net.endpoint(i)).collect();
    for ep in eps.iter_mut().skip(1) {
        join_with_timeout(&[sim_addr(0)], ep, T).unwrap();
    }
    for ep in eps.iter_mut() {
        gossip_round(ep, T);
    }
    (net, eps)
}

fn ids_with_self(t: &impl Transport) -> Vec<u32> {
    let mut ids = t.table().ids();
    ids.push(t.node_id());
    ids.sort_unstable();
    ids
}

#[test]
fn first_node_bootstraps_with_empty_table() {
    let net = SimNet::new(SimNetConfig::default()).unwrap();
    let mut ep = net.endpoint(0);
    assert!(join(&[], &mut ep).unwrap().is_empty());
}

#[test]
fn membership_converges_after_one_gossip_round() {
    for n in [3, 6, 9] {
        let (_, eps) = sim(SimNetConfig::default(), n);
        let expect: Vec<u32> = (0..n).collect();
        for ep in &eps {
            assert_eq!(ids_with_self(ep), expect, "node {}", ep.node_id());
        }
    }
}

#[test]
fn duplicate_id_from_another_address_collides() {
    let (net, _eps) = sim(SimNetConfig::default(), 3);
    let mut impostor = net.endpoint_at(1, "sim://impostor");
    assert_eq!(
        join_with_timeout(&[sim_addr(0)], &mut impostor, T),
        Err(NetError::IdCollision(1))
    );
}

#[test]
fn four_nodes_each_get_three_acks() {
    let (_, mut eps) = sim(SimNetConfig::default(), 4);
    for ep in eps.iter_mut() {
        let table = ep.table();
        let u = update(ep.node_id(), 0, vec![1.0, 2.0]);
        assert_eq!(broadcast_weights(&u, &table, ep, T).acked(), 3);
    }
}

#[test]
fn certain_drop_reports_timeout() {
    let cfg = SimNetConfig {
        link_drop: vec![(0, 1, 1.0)],
        ..SimNetConfig::default()
    };
    let net = SimNet::new(cfg).unwrap();
    let mut a = net.endpoint(0);
    let _b = net.endpoint(1);
    a.with_table(&mut |t| {
        t.upsert(1, &sim_addr(1), 0);
    });
    let report = broadcast_weights(&update(0, 0, vec![0.5]), &a.table(), &mut a, T);
    assert_eq!(
        report.outcomes[&1],
        PeerOutcome::Failed(DeliveryError::Timeout)
    );
}

#[test]
fn empty_table_gives_empty_report() {
    let net = SimNet::new(SimNetConfig::default()).unwrap();
    let mut a = net.endpoint(0);
    let report = broadcast_weights(&update(0, 0, vec![0.5]), &a.table(), &mut a, T);
    assert!(report.outcomes.is_empty());
}

#[test]
fn collection_keeps_current_round_only() {
    let (_, mut eps) = sim(SimNetConfig::default(), 4);
    for (k, round) in [(1usize, 3u32), (2, 3), (3, 2)] {
        let mut only0 = eps[k].table();
        for id in only0.ids() {
            if id != 0 {
                only0.remove(id);
            }
        }
        broadcast_weights(
            &update(k as u32, round, vec![k as f64]),
            &only0,
            &mut eps[k],
            T,
        );
    }
    let got = UpdateCollector::new()
        .collect(3, Duration::from_millis(200), &mut eps[0])
        .unwrap();
    let senders: Vec<u32> = got.iter().map(|u| u.node_id).collect();
    assert_eq!(senders, vec![1, 2]);
}

#[test]
fn late_arrivals_miss_the_window_and_stay_queued() {
    let (net, mut eps) = sim(SimNetConfig::default(), 3);
    let start = eps.iter().map(|e| e.now_ms()).max().unwrap();
    for ep in eps.iter_mut() {
        ep.advance_to(start);
    }
    let mut to0 = eps[1].table();
    to0.remove(2);
    broadcast_weights(&update(1, 0, vec![1.0]), &to0, &mut eps[1], T);
    // Node 2 sends well after node 0's window closes.
    eps[2].advance_to(start + 5_000);
    let mut to0 = eps[2].table();
    to0.remove(1);
    broadcast_weights(&update(2, 0, vec![2.0]), &to0, &mut eps[2], T);

    let mut collector = UpdateCollector::new();
    let got = collector
        .collect(0, Duration::from_millis(1_000), &mut eps[0])
        .unwrap();
    assert_eq!(got.iter().map(|u| u.node_id).collect::<Vec<_>>(), vec![1]);
    assert_eq!(net.queued(0), 1);
}

#[test]
fn zero_jitter_delivers_at_exact_latency() {
    let cfg = SimNetConfig {
        latency_mean_ms: 37.0,
        latency_jitter_ms: 0.0,
        ..SimNetConfig::default()
    };
    let (net, _) = sim(cfg, 4);
    for e in net.transcript() {
        assert_eq!(
            e.fate,
            Fate::Delivered {
                at_ms: e.sent_ms + 37
            }
        );
    }
}

#[test]
fn partitions_are_never_crossed() {
    let cfg = SimNetConfig {
        partitions: vec![vec![0, 1], vec![2, 3]],
        ..SimNetConfig::default()
    };
    let net = SimNet::new(cfg).unwrap();
    let mut eps: Vec<_> = (0..4).map(|i| net.endpoint(i)).collect();
    for ep in eps.iter_mut().skip(1) {
        let _ = join_with_timeout(&[sim_addr(0)], ep, T);
    }
    let group = |id: u32| id / 2;
    for e in net.transcript() {
        if group(e.from) != group(e.to) {
            assert_eq!(e.fate, Fate::Partitioned);
        } else {
            assert!(matches!(e.fate, Fate::Delivered { .. }));
        }
    }
    assert_eq!(ids_with_self(&eps[1]), vec![0, 1]);
    assert!(eps[2].table().is_empty());
}

fn lossy_workload(seed: u64) -> Vec<swarmlearn::net::sim::TranscriptEntry> {
    let cfg = SimNetConfig {
        drop_prob: 0.3,
        seed,
        ..SimNetConfig::default()
    };
    let net = SimNet::new(cfg).unwrap();
    let mut eps: Vec<_> = (0..5).map(|i| net.endpoint(i)).collect();
    for ep in eps.iter_mut().skip(1) {
        let _ = join_with_timeout(&[sim_addr(0)], ep, T);
    }
    for round in 0..3 {
        for ep in eps.iter_mut() {
            gossip_round(ep, T);
            let table = ep.table();
            broadcast_weights(
                &update(ep.node_id(), round, vec![f64::from(round); 4]),
                &table,
                ep,
                T,
            );
        }
    }
    net.transcript()
}

#[test]
fn simulator_transcripts_are_reproducible() {
    assert_eq!(lossy_workload(42), lossy_workload(42));
    assert_ne!(lossy_workload(42), lossy_workload(43));
}

/// Scripted workload: node 0 bootstraps, 1 and 2 join, everyone gossips,
/// then everyone broadcasts one update. Returns what each node received.
fn scripted<E: Transport>(
    mut eps: Vec<E>,
    seed_addr: String,
) -> BTreeMap<u32, Vec<(u32, u32, Vec<u64>)>> {
    for ep in eps.iter_mut().skip(1) {
        join(std::slice::from_ref(&seed_addr), ep).unwrap();
    }
    for ep in eps.iter_mut() {
        gossip_round(ep, Duration::from_secs(2));
    }
    for ep in eps.iter_mut() {
        let id = ep.node_id();
        let table = ep.table();
        let u = update(id, 1, vec![f64::from(id) + 0.25, -1.5]);
        assert_eq!(
            broadcast_weights(&u, &table, ep, Duration::from_secs(2)).acked(),
            2
        );
    }
    let mut out = BTreeMap::new();
    for ep in eps.iter_mut() {
        let mut got = Vec::new();
        let deadline = ep.now_ms() + 500;
        while let Some(inb) = ep.next_inbound(deadline).unwrap() {
            if let Payload::Weights(w) = &inb.message.payload {
                got.push((
                    inb.message.sender_id,
                    w.round,
                    w.values.iter().map(|v| v.to_bits()).collect(),
                ));
            }
        }
        got.sort();
        out.insert(ep.node_id(), got);
    }
    out
}

#[test]
fn tcp_and_sim_deliver_the_same_messages() {
    let cfg = SimNetConfig {
        latency_mean_ms: 0.0,
        latency_jitter_ms: 0.0,
        ..SimNetConfig::default()
    };
    let net = SimNet::new(cfg).unwrap();
    let sim_eps: Vec<_> = (0..3).map(|i| net.endpoint(i)).collect();
    let from_sim = scripted(sim_eps, sim_addr(0));

    let tcp_eps: Vec<_> = (0..3)
        .map(|i| TcpTransport::bind(i, "127.0.0.1:0", None).unwrap())
        .collect();
    let seed = tcp_eps[0].address().to_string();
    let from_tcp = scripted(tcp_eps, seed);
    assert_eq!(from_sim, from_tcp);
    assert_eq!(from_sim[&0].len(), 2);
}

fn secured(keys: &[StaticKeypair], me: usize) -> SecurityConfig {
    SecurityConfig {
        local: keys[me].clone(),
        trusted: keys
            .iter()
            .enumerate()
            .map(|(i, k)| (i as u32, k.public))
            .collect(),
    }
}

#[test]
fn encrypted_channel_admits_trusted_keys_only() {
    let keys: Vec<StaticKeypair> = (0..3).map(|_| StaticKeypair::generate()).collect();
    let a = TcpTransport::bind(0, "127.0.0.1:0", Some(secured(&keys, 0))).unwrap();
    let mut b = TcpTransport::bind(1, "127.0.0.1:0", Some(secured(&keys, 1))).unwrap();
    let seed = vec![a.address().to_string()];
    join(&seed, &mut b).unwrap();
    assert_eq!(a.table().ids(), vec![1]);

    // Unknown key.
    let stranger = SecurityConfig {
        local: StaticKeypair::generate(),
        trusted: secured(&keys, 0).trusted,
    };
    let mut c = TcpTransport::bind(7, "127.0.0.1:0", Some(stranger)).unwrap();
    assert_eq!(join(&seed, &mut c), Err(NetError::NoPeersReachable));

    // Trusted key, but claiming someone else's id.
    let mut d = TcpTransport::bind(2, "127.0.0.1:0", Some(secured(&keys, 1))).unwrap();
    assert_eq!(join(&seed, &mut d), Err(NetError::NoPeersReachable));

    // Plaintext client against an encrypted listener.
    let mut e = TcpTransport::bind(2, "127.0.0.1:0", None).unwrap();
    assert!(join(&seed, &mut e).is_err());
    assert_eq!(a.table().ids(), vec![1]);
}

fn message() -> impl Strategy<Value = SwarmMessage> {
    let text = "[ -~]{0,40}";
    let payload = prop_oneof![
        text.prop_map(|s| Payload::Hello { listen_addr: s }),
        prop::collection::vec((any::<u32>(), text, any::<u64>()), 0..8).prop_map(|v| {
            Payload::PeerList(
                v.into_iter()
                    .map(|(node_id, addr, last_seen_ms)| PeerInfo {
                        node_id,
                        addr,
                        last_seen_ms,
                    })
                    .collect(),
            )
        }),
        (
            any::<u32>(),
            any::<u32>(),
            any::<u64>(),
            prop::collection::vec(prop::num::f64::ANY, 0..64)
        )
            .prop_map(|(round, epoch, sample_count, values)| Payload::Weights(
                WeightsBody {
                    round,
                    epoch,
                    sample_count,
                    values: values.into_iter().filter(|v| !v.is_nan()).collect(),
                }
            )),
        Just(Payload::Leave),
    ];
    (any::<u32>(), payload).prop_map(|(id, p)| SwarmMessage::new(id, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn codec_round_trip(m in message()) {
        prop_assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn decode_is_total_behind_a_valid_header(kind in 0u8..8, body in prop::collection::vec(any::<u8>(), 0..300)) {
        let mut frame = b"SWRM\x01".to_vec();
        frame.push(kind);
        frame.extend_from_slice(&9u32.to_le_bytes());
        frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
        frame.extend_from_slice(&body);
        let _ = decode(&frame);
    }
}
