//! Peer-to-peer swarm learning at desk scale.
//!
//! Every node trains a small classifier on its private shard, periodically
//! pushes its weights to the peers it knows, and merges what comes back by
//! sample-weighted averaging, keeping the merge only if it holds up on the
//! node's own validation data. There is no coordinator: membership spreads
//! by gossip, and aggregation happens independently on each node.
//!
//! The pieces, bottom up:
//!
//! - [`params`]: flat weight vectors and exact, order-independent averaging.
//! - [`data`]: synthetic data, splits, non-IID partitioning, CSV.
//! - [`trainer`]: logistic / one-hidden-layer models, AdamW, cosine schedule.
//! - [`metrics`]: AUC, threshold metrics, Davies–Bouldin.
//! - [`aggregation`]: FedAvg and the validation gate.
//! - [`net`]: wire codec, membership, simulated and TCP transports.
//! - [`node`]: the round loop, baselines, stop/resume, the sim swarm driver.
//! - [`harness`]: scenario files, result files, cross-seed reports.

pub mod aggregation;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod node;
pub mod params;
pub mod trainer;

pub use aggregation::{fedavg, merge_round, GateMode, GatePolicy, MergeScheme, ModelUpdate};
pub use data::{partition, synth_dataset, Dataset, NodeShard, PartitionPlan};
pub use metrics::{roc_auc, MetricsReport};
pub use node::{run_node, run_sim_swarm, run_standalone, signal_stop, NodeConfig, StopHandle};
pub use params::{ShapeSpec, WeightVector};
pub use trainer::{ModelSpec, TrainConfig};
