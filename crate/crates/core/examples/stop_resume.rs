//! Stops a node from another thread once its first checkpoint lands, then
//! resumes from that checkpoint and compares against an uninterrupted run.

use std::path::Path;
use std::time::Duration;

use swarmlearn::data::{partition, synth_dataset, PartitionPlan};
use swarmlearn::net::sim::{SimEndpoint, SimNet, SimNetConfig};
use swarmlearn::node::{
    load_checkpoint, run_node, signal_stop, NodeConfig, RunOptions, StopHandle,
};
use swarmlearn::trainer::{ModelSpec, TrainConfig};

fn config() -> Result<NodeConfig, Box<dyn std::error::Error>> {
    let ds = synth_dataset(20_000, 16, 0.45, 0.5, 4)?;
    let mut plan = PartitionPlan::new(vec![1.0], 4);
    plan.val_frac = 0.125;
    let shard = partition(&ds, &plan)?.remove(0);
    let model = ModelSpec {
        input_dim: 16,
        hidden_dim: 64,
    };
    let train = TrainConfig {
        patience: 20,
        ..TrainConfig::default()
    };
    let mut cfg = NodeConfig::new(0, shard, model, train);
    cfg.collect_window = Duration::from_millis(10);
    Ok(cfg)
}

fn endpoint() -> SimEndpoint {
    SimNet::new(SimNetConfig::default())
        .expect("valid config")
        .endpoint(0)
}

fn stop_when_exists(path: &Path, handle: StopHandle) -> std::thread::JoinHandle<()> {
    let path = path.to_path_buf();
    std::thread::spawn(move || {
        while !path.exists() && !handle.is_finished() {
            std::thread::sleep(Duration::from_millis(1));
        }
        match signal_stop(&handle) {
            Ok(()) => println!("stop requested"),
            Err(e) => println!("stop request refused: {e}"),
        }
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("swarm-stop-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("node0.ckpt");

    let handle = StopHandle::new();
    let watcher = stop_when_exists(&ckpt, handle.clone());
    let opts = RunOptions {
        checkpoint_path: Some(ckpt.clone()),
        resume_from: None,
    };
    let first = run_node(config()?, &mut endpoint(), &handle, &opts)?;
    watcher.join().expect("watcher thread");
    println!(
        "first run: {:?} after {} rounds, {} epochs",
        first.stop,
        first.reports.len(),
        first.history.len()
    );

    let opts = RunOptions {
        checkpoint_path: Some(ckpt.clone()),
        resume_from: Some(load_checkpoint(&ckpt)?),
    };
    let resumed = run_node(config()?, &mut endpoint(), &StopHandle::new(), &opts)?;
    let straight = run_node(
        config()?,
        &mut endpoint(),
        &StopHandle::new(),
        &RunOptions::default(),
    )?;
    println!(
        "resumed run: {:?}, {} epochs in total; identical to an uninterrupted run: {}",
        resumed.stop,
        resumed.history.len(),
        resumed.weights.bitwise_eq(&straight.weights) && resumed.history == straight.history
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
