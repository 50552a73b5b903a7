//! The validation gate against two misbehaving peers: one broadcasts zeros,
//! one broadcasts negated weights, both claiming huge sample counts.

use std::time::Duration;

use swarmlearn::aggregation::{GateMode, GatePolicy};
use swarmlearn::data::{partition, synth_dataset, PartitionPlan};
use swarmlearn::node::{run_sim_swarm, Behavior, NodeConfig, SimSwarmOptions, StopHandle};
use swarmlearn::trainer::{ModelSpec, TrainConfig};

fn run(behavior: Behavior, hidden_dim: usize) -> Result<(), Box<dyn std::error::Error>> {
    let ds = synth_dataset(6_000, 16, 0.45, 0.5, 21)?;
    let mut plan = PartitionPlan::new(vec![0.2, 0.3, 0.3, 0.2], 21);
    plan.val_frac = 0.125;
    let model = ModelSpec {
        input_dim: 16,
        hidden_dim,
    };
    let configs = partition(&ds, &plan)?
        .into_iter()
        .map(|shard| {
            let id = shard.node_id;
            let mut cfg = NodeConfig::new(
                id,
                shard,
                model,
                TrainConfig {
                    seed: id as u64,
                    ..TrainConfig::default()
                },
            );
            cfg.init_seed = 21;
            cfg.gate = GatePolicy {
                mode: GateMode::Relative,
                theta: 0.8,
            };
            cfg.collect_window = Duration::from_millis(500);
            if id == 3 {
                cfg.behavior = behavior;
            }
            cfg
        })
        .collect();
    let run = run_sim_swarm(configs, &SimSwarmOptions::default(), &StopHandle::new())?;

    println!("adversary: {behavior:?}, hidden_dim {hidden_dim}");
    for (id, out) in run.outcomes.iter().filter(|(id, _)| **id != 3) {
        for r in &out.reports {
            println!(
                "  node {id} round {}: local {:.4} candidate {:.4} -> {} (ratio {:.3})",
                r.round,
                r.local_val_auc,
                r.candidate_val_auc,
                if r.gate_accepted { "accept" } else { "reject" },
                r.candidate_val_auc / r.local_val_auc
            );
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Zeros only rescale the honest average, which leaves AUC unchanged, so
    // the gate passes them.
    run(
        Behavior::ZeroWeights {
            claimed_samples: 1_000_000,
        },
        16,
    )?;
    // Negating a ReLU network does not reverse its ranking, so the attack is
    // shown on a logistic model, where it does and the gate rejects it.
    run(
        Behavior::SignFlip {
            claimed_samples: 1_000_000,
        },
        0,
    )
}
