//! Three nodes on localhost TCP with Noise-encrypted, mutually
//! authenticated channels. A fourth node with an unknown key cannot join.

use std::collections::BTreeMap;
use std::time::Duration;

use swarmlearn::data::{partition, synth_dataset, PartitionPlan};
use swarmlearn::net::{gossip_round, join, SecurityConfig, StaticKeypair, TcpTransport, Transport};
use swarmlearn::node::{run_node, NodeConfig, RunOptions, StopHandle};
use swarmlearn::trainer::{ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys: Vec<StaticKeypair> = (0..3).map(|_| StaticKeypair::generate()).collect();
    let trusted: BTreeMap<u32, [u8; 32]> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (i as u32, k.public))
        .collect();

    let mut transports = Vec::new();
    for (id, key) in keys.iter().enumerate() {
        let sec = SecurityConfig {
            local: key.clone(),
            trusted: trusted.clone(),
        };
        transports.push(TcpTransport::bind(id as u32, "127.0.0.1:0", Some(sec))?);
    }
    let seed = transports[0].address().to_string();
    for t in transports.iter_mut().skip(1) {
        join(std::slice::from_ref(&seed), t)?;
    }
    for t in transports.iter_mut() {
        gossip_round(t, Duration::from_secs(2));
        println!(
            "node {} at {} knows {:?}",
            t.node_id(),
            t.address(),
            t.table().ids()
        );
    }

    let intruder_sec = SecurityConfig {
        local: StaticKeypair::generate(),
        trusted: trusted.clone(),
    };
    let mut intruder = TcpTransport::bind(9, "127.0.0.1:0", Some(intruder_sec))?;
    println!(
        "intruder join: {:?}",
        join(std::slice::from_ref(&seed), &mut intruder).unwrap_err()
    );

    let ds = synth_dataset(3_000, 8, 0.6, 0.5, 5)?;
    let mut plan = PartitionPlan::new(vec![0.2, 0.4, 0.4], 5);
    plan.val_frac = 0.15;
    let model = ModelSpec {
        input_dim: 8,
        hidden_dim: 8,
    };
    let shards = partition(&ds, &plan)?;
    std::thread::scope(|s| {
        for (shard, mut t) in shards.into_iter().zip(transports) {
            s.spawn(move || {
                let id = shard.node_id;
                let train = TrainConfig {
                    lr_initial: 1e-3,
                    seed: id as u64,
                    ..TrainConfig::default()
                };
                let mut cfg = NodeConfig::new(id, shard, model, train);
                cfg.max_epochs = 9;
                cfg.collect_window = Duration::from_millis(800);
                let out = run_node(cfg, &mut t, &StopHandle::new(), &RunOptions::default())
                    .expect("node runs");
                let heard: Vec<usize> = out.reports.iter().map(|r| r.peers_heard).collect();
                println!(
                    "node {id}: peers heard per round {heard:?}, stop {:?}",
                    out.stop
                );
                // Keep serving until the others finish their last round.
                std::thread::sleep(Duration::from_millis(1_500));
            });
        }
    });
    Ok(())
}
