//! A four-node swarm on the deterministic network simulator, with lossy
//! links. Prints every node's round log and the resulting test AUCs.

use std::time::Duration;

use swarmlearn::data::{partition, split, synth_dataset, PartitionPlan};
use swarmlearn::net::sim::SimNetConfig;
use swarmlearn::node::{run_sim_swarm, NodeConfig, SimSwarmOptions, StopHandle};
use swarmlearn::trainer::{evaluate_auc, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = synth_dataset(10_000, 16, 0.45, 0.5, 3)?;
    let (train, _, test) = split(&ds, 0.8, 0.0, 3)?;
    let mut plan = PartitionPlan::new(vec![0.1, 0.3, 0.3, 0.3], 3);
    plan.val_frac = 0.125;
    let model = ModelSpec {
        input_dim: 16,
        hidden_dim: 16,
    };
    let configs: Vec<NodeConfig> = partition(&train, &plan)?
        .into_iter()
        .map(|shard| {
            let id = shard.node_id;
            let train = TrainConfig {
                seed: 100 + id as u64,
                ..TrainConfig::default()
            };
            let mut cfg = NodeConfig::new(id, shard, model, train);
            cfg.init_seed = 3;
            cfg.collect_window = Duration::from_millis(500);
            cfg
        })
        .collect();

    let opts = SimSwarmOptions {
        net: SimNetConfig {
            drop_prob: 0.2,
            seed: 3,
            ..SimNetConfig::default()
        },
        ..SimSwarmOptions::default()
    };
    let run = run_sim_swarm(configs, &opts, &StopHandle::new())?;

    for (id, out) in &run.outcomes {
        println!("node {id} ({:?}):", out.stop);
        for r in &out.reports {
            println!(
                "  round {} epochs {} heard {} local {:.4} candidate {:.4} {}",
                r.round,
                r.epochs_run,
                r.peers_heard,
                r.local_val_auc,
                r.candidate_val_auc,
                if r.gate_accepted { "accept" } else { "reject" }
            );
        }
        println!(
            "  test AUC {:.4}",
            evaluate_auc(&model, &out.weights, &test)?
        );
    }
    let dropped = run
        .transcript
        .iter()
        .filter(|e| e.fate == swarmlearn::net::sim::Fate::Dropped)
        .count();
    println!("{} frames, {dropped} dropped", run.transcript.len());
    Ok(())
}
