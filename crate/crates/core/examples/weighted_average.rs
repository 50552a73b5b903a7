//! Sample-weighted (FedAvg) and uniform merging of three model updates.

use swarmlearn::aggregation::{combine, MergeScheme, ModelUpdate};
use swarmlearn::params::WeightVector;

fn update(node_id: u32, values: &[f64], samples: u64) -> ModelUpdate {
    ModelUpdate {
        weights: WeightVector::from_flat(values.to_vec()).expect("finite values"),
        sample_count: samples,
        node_id,
        round: 0,
        epoch: 3,
    }
}

fn main() {
    let updates = [
        update(0, &[1.0, 0.0, -2.0], 100),
        update(1, &[3.0, 1.0, -1.0], 300),
        update(2, &[2.0, 2.0, 0.0], 600),
    ];
    for scheme in [MergeScheme::Fedavg, MergeScheme::Uniform] {
        let merged = combine(scheme, &updates).expect("compatible shapes");
        println!("{scheme:?}: {:?}", merged.values());
    }

    // The result does not depend on the order the updates arrived in.
    let mut reversed = updates.clone();
    reversed.reverse();
    let a = combine(MergeScheme::Fedavg, &updates).unwrap();
    let b = combine(MergeScheme::Fedavg, &reversed).unwrap();
    println!("order independent: {}", a.bitwise_eq(&b));
}
