//! Synthesizes a dataset and deals it out to four nodes with skewed sizes
//! and class balance.

use swarmlearn::data::{partition, split, synth_dataset, PartitionPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = synth_dataset(10_000, 16, 0.45, 0.5, 7)?;
    let (train, val, test) = split(&ds, 0.7, 0.1, 7)?;
    println!(
        "train {} / val {} / test {}",
        train.len(),
        val.len(),
        test.len()
    );
    println!("test set sha256 {}", test.content_hash());

    let plan = PartitionPlan {
        fractions: vec![0.1, 0.2, 0.2, 0.2],
        class_bias: Some(vec![0.2, 0.5, 0.5, 0.8]),
        val_frac: 0.125,
        seed: 7,
    };
    for shard in partition(&train, &plan)? {
        let n = shard.train.len();
        println!(
            "node {}: {n:>4} train rows ({:.0}% positive), {:>3} validation rows",
            shard.node_id,
            100.0 * shard.train.positives() as f64 / n as f64,
            shard.validation.len()
        );
    }
    Ok(())
}
