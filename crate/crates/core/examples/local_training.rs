//! Trains one node alone and prints the per-epoch history.
//!
//! Run with a larger learning rate to see early stopping kick in:
//! `cargo run --example local_training -- 0.01`

use swarmlearn::data::{partition, synth_dataset, PartitionPlan};
use swarmlearn::node::{run_standalone, NodeConfig};
use swarmlearn::trainer::{evaluate_auc, ModelSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lr: f64 = std::env::args().nth(1).map_or(Ok(1e-3), |s| s.parse())?;
    let ds = synth_dataset(3_000, 16, 0.45, 0.5, 11)?;
    let mut plan = PartitionPlan::new(vec![0.7, 0.3], 11);
    plan.val_frac = 0.15;
    let mut shards = partition(&ds, &plan)?;
    let holdout = shards.pop().expect("two shards").train;

    let model = ModelSpec {
        input_dim: 16,
        hidden_dim: 16,
    };
    let train = TrainConfig {
        lr_initial: lr,
        ..TrainConfig::default()
    };
    let cfg = NodeConfig::new(0, shards.remove(0), model, train);
    let (best, history) = run_standalone(&cfg)?;

    println!("epoch      lr  train_loss  train_auc  val_auc");
    for r in &history {
        println!(
            "{:>5} {:>7.1e} {:>11.4} {:>10.4} {:>8.4}",
            r.epoch, r.lr_used, r.train_loss, r.train_auc, r.val_auc
        );
    }
    println!(
        "holdout AUC of best weights: {:.4}",
        evaluate_auc(&model, &best, &holdout)?
    );
    Ok(())
}
