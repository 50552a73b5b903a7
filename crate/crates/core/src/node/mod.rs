//! The per-node round loop: train K epochs, broadcast, collect, gated merge.

mod checkpoint;
mod swarm;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{merge_round, GatePolicy, MergeScheme, ModelUpdate};
use crate::data::{Dataset, NodeShard};
use crate::net::codec::{Payload, SwarmMessage};
use crate::net::exchange::{broadcast_weights, UpdateCollector};
use crate::net::transport::{Transport, TransportDown};
use crate::params::{l2_distance, WeightVector};
use crate::trainer::{
    init_model, EpochHistory, EpochRecord, LocalTrainer, ModelSpec, StopFlag, TrainConfig,
    TrainError,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use swarm::{run_sim_swarm, SimSwarmOptions, SwarmRun};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("transport down after {} rounds: {source}", partial.len())]
    TransportDown {
        source: TransportDown,
        partial: Vec<RoundReport>,
    },
    #[error("run already stopped")]
    AlreadyStopped,
    #[error("invalid node configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

/// Fault injection for robustness experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Behavior {
    #[default]
    Honest,
    /// Broadcasts an all-zero vector claiming `claimed_samples`.
    ZeroWeights { claimed_samples: u64 },
    /// Broadcasts its negated weights claiming `claimed_samples`.
    SignFlip { claimed_samples: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub node_id: u32,
    pub shard: NodeShard,
    pub model: ModelSpec,
    /// `train.epochs` is overridden by `max_epochs`.
    pub train: TrainConfig,
    pub init_seed: u64,
    pub exchange_interval: usize,
    pub gate: GatePolicy,
    pub scheme: MergeScheme,
    pub max_epochs: usize,
    pub collect_window: Duration,
    pub ack_timeout: Duration,
    pub behavior: Behavior,
}

pub const DEFAULT_EXCHANGE_INTERVAL: usize = 3;
pub const DEFAULT_MAX_EPOCHS: usize = 20;
pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_millis(5_000);

impl NodeConfig {
    pub fn new(node_id: u32, shard: NodeShard, model: ModelSpec, train: TrainConfig) -> Self {
        Self {
            node_id,
            shard,
            model,
            train,
            init_seed: 0,
            exchange_interval: DEFAULT_EXCHANGE_INTERVAL,
            gate: GatePolicy::default(),
            scheme: MergeScheme::Fedavg,
            max_epochs: DEFAULT_MAX_EPOCHS,
            collect_window: Duration::from_millis(1_000),
            ack_timeout: DEFAULT_ACK_TIMEOUT,
            behavior: Behavior::Honest,
        }
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        if self.exchange_interval == 0 {
            return Err(NodeError::Config(
                "exchange_interval must be at least 1".into(),
            ));
        }
        if self.max_epochs < self.exchange_interval {
            return Err(NodeError::Config(format!(
                "max_epochs {} is shorter than exchange_interval {}",
                self.max_epochs, self.exchange_interval
            )));
        }
        if self.shard.train.is_empty() {
            return Err(NodeError::Config("training shard is empty".into()));
        }
        if self.shard.train.dim() != self.model.input_dim {
            return Err(NodeError::Config(format!(
                "shard has {} features, model expects {}",
                self.shard.train.dim(),
                self.model.input_dim
            )));
        }
        self.gate.validate().map_err(NodeError::Config)?;
        self.effective_train().validate()?;
        Ok(())
    }

    /// Training configuration with the schedule spanning the whole run.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.max_epochs,
            ..self.train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub node: u32,
    pub round: u32,
    pub epochs_run: usize,
    /// Global epoch count at the end of the round.
    pub epoch_end: usize,
    pub train_auc: f64,
    pub local_val_auc: f64,
    pub candidate_val_auc: f64,
    /// Validation AUC of the weights the node holds after the round.
    pub adopted_val_auc: f64,
    pub gate_accepted: bool,
    pub peers_heard: usize,
    pub peers_merged: usize,
    pub weights_l2_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutcome {
    pub weights: WeightVector,
    pub reports: Vec<RoundReport>,
    pub history: EpochHistory,
    pub stop: StopReason,
}

/// Lets another thread end a run at the next epoch boundary.
#[derive(Debug, Clone, Default)]
pub struct StopHandle {
    inner: Arc<StopInner>,
}

#[derive(Debug, Default)]
struct StopInner {
    flag: StopFlag,
    finished: AtomicBool,
}

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn flag(&self) -> &StopFlag {
        &self.inner.flag
    }

    pub(crate) fn mark_finished(&self) {
        self.inner.finished.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.inner.finished.load(Ordering::SeqCst)
    }
}

/// Requests a manual stop. Fails if the run already ended or a stop is pending.
pub fn signal_stop(handle: &StopHandle) -> Result<(), NodeError> {
    if handle.is_finished() || !handle.flag().raise() {
        return Err(NodeError::AlreadyStopped);
    }
    Ok(())
}

/// Formats one structured log line with the stable field set.
#[allow(clippy::too_many_arguments)]
pub fn log_line(
    ts_ms: u64,
    node: u32,
    epoch: Option<usize>,
    round: u32,
    train_auc: f64,
    val_auc: f64,
    gate: Option<bool>,
    peers: Option<usize>,
) -> String {
    let epoch = epoch.map_or_else(|| "-".to_string(), |e| e.to_string());
    let gate = match gate {
        Some(true) => "accept",
        Some(false) => "reject",
        None => "-",
    };
    let peers = peers.map_or_else(|| "-".to_string(), |p| p.to_string());
    format!(
        "ts={ts_ms} node={node} epoch={epoch} round={round} train_auc={train_auc:.6} val_auc={val_auc:.6} gate={gate} peers={peers}"
    )
}

/// Training-side state of one swarm participant, independent of transport.
pub struct SwarmNode {
    cfg: NodeConfig,
    trainer: LocalTrainer,
    round: u32,
    reports: Vec<RoundReport>,
    stop: Option<StopReason>,
    round_records: Vec<EpochRecord>,
    clock_ms: u64,
}

impl SwarmNode {
    pub fn new(cfg: NodeConfig) -> Result<Self, NodeError> {
        cfg.validate()?;
        let weights = init_model(&cfg.model, cfg.init_seed);
        let trainer = LocalTrainer::new(cfg.model, cfg.effective_train(), weights)?;
        Ok(Self {
            cfg,
            trainer,
            round: 0,
            reports: Vec::new(),
            stop: None,
            round_records: Vec::new(),
            clock_ms: 0,
        })
    }

    pub fn resume(cfg: NodeConfig, ck: Checkpoint) -> Result<Self, NodeError> {
        cfg.validate()?;
        if ck.node_id != cfg.node_id {
            return Err(NodeError::Config(format!(
                "checkpoint belongs to node {}, not {}",
                ck.node_id, cfg.node_id
            )));
        }
        let trainer = LocalTrainer::restore(cfg.model, cfg.effective_train(), ck.trainer)?;
        Ok(Self {
            cfg,
            trainer,
            round: ck.round,
            reports: ck.reports,
            stop: None,
            round_records: Vec::new(),
            clock_ms: 0,
        })
    }

    pub fn id(&self) -> u32 {
        self.cfg.node_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    /// Timestamp used in log lines; the driver sets it from its transport.
    pub fn set_clock(&mut self, now_ms: u64) {
        self.clock_ms = now_ms;
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn trainer(&self) -> &LocalTrainer {
        &self.trainer
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            node_id: self.cfg.node_id,
            round: self.round,
            trainer: self.trainer.snapshot(),
            reports: self.reports.clone(),
        }
    }

    fn local_update(&self) -> ModelUpdate {
        ModelUpdate {
            weights: self.trainer.weights().clone(),
            sample_count: self.cfg.shard.sample_count() as u64,
            node_id: self.cfg.node_id,
            round: self.round,
            epoch: self.trainer.epochs_done() as u32,
        }
    }

    /// What this node puts on the wire, after fault injection.
    pub fn outgoing(&self, local: &ModelUpdate) -> ModelUpdate {
        match self.cfg.behavior {
            Behavior::Honest => local.clone(),
            Behavior::ZeroWeights { claimed_samples } => ModelUpdate {
                weights: WeightVector::zeros(local.weights.shape().clone()),
                sample_count: claimed_samples,
                ..local.clone()
            },
            Behavior::SignFlip { claimed_samples } => ModelUpdate {
                weights: WeightVector::new(
                    local.weights.values().iter().map(|v| -v).collect(),
                    local.weights.shape().clone(),
                )
                .expect("negation keeps values finite"),
                sample_count: claimed_samples,
                ..local.clone()
            },
        }
    }

    /// Runs this round's local epochs. Returns `None` when the node has
    /// nothing left to do (stopped or out of epochs).
    pub fn train_phase(&mut self, stop: &StopFlag) -> Result<Option<ModelUpdate>, NodeError> {
        if self.stop.is_some() {
            return Ok(None);
        }
        if stop.is_raised() {
            self.stop = Some(StopReason::Manual);
            return Ok(None);
        }
        if self.trainer.is_finished() {
            self.stop = Some(if self.trainer.stopped_early() {
                StopReason::EarlyStop
            } else {
                StopReason::MaxEpochs
            });
            return Ok(None);
        }
        let budget = self
            .cfg
            .exchange_interval
            .min(self.trainer.epochs_remaining());
        self.round_records = self
            .trainer
            .run_epochs(&self.cfg.shard, budget, Some(stop))?;
        for r in &self.round_records {
            info!(
                "{}",
                log_line(
                    self.clock_ms,
                    self.cfg.node_id,
                    Some(r.epoch),
                    self.round,
                    r.train_auc,
                    r.val_auc,
                    None,
                    None
                )
            );
        }
        Ok(Some(self.local_update()))
    }

    /// Gated merge with whatever peer updates arrived, then the stop check.
    pub fn merge_phase(
        &mut self,
        local: &ModelUpdate,
        peers: Vec<ModelUpdate>,
        stop: &StopFlag,
    ) -> Result<RoundReport, NodeError> {
        let shape = local.weights.shape();
        let peers_heard = peers.len();
        let peers: Vec<ModelUpdate> = peers
            .into_iter()
            .map(|mut u| {
                if u.weights.len() == shape.total_len() {
                    u.weights = u.weights.with_shape(shape.clone()).expect("length checked");
                }
                u
            })
            .collect();
        let outcome = merge_round(
            &self.cfg.model,
            local,
            &peers,
            &self.cfg.shard,
            &self.cfg.gate,
            self.cfg.scheme,
        )?;
        let adopted_val_auc = if outcome.accepted {
            outcome.candidate_val_auc
        } else {
            outcome.local_val_auc
        };
        let weights_l2_delta =
            l2_distance(&local.weights, &outcome.weights).map_err(TrainError::from)?;
        if outcome.accepted && outcome.peers_merged > 0 {
            self.trainer
                .adopt(outcome.weights, outcome.candidate_val_auc)?;
        }

        let train_auc = self.round_records.last().map_or(f64::NAN, |r| r.train_auc);
        let report = RoundReport {
            node: self.cfg.node_id,
            round: self.round,
            epochs_run: self.round_records.len(),
            epoch_end: self.trainer.epochs_done(),
            train_auc,
            local_val_auc: outcome.local_val_auc,
            candidate_val_auc: outcome.candidate_val_auc,
            adopted_val_auc,
            gate_accepted: outcome.accepted,
            peers_heard,
            peers_merged: outcome.peers_merged,
            weights_l2_delta,
        };
        info!(
            "{}",
            log_line(
                self.clock_ms,
                self.cfg.node_id,
                None,
                self.round,
                train_auc,
                adopted_val_auc,
                Some(outcome.accepted),
                Some(peers_heard)
            )
        );
        self.reports.push(report.clone());
        self.round += 1;

        if stop.is_raised() {
            self.stop = Some(StopReason::Manual);
        } else if self.trainer.stopped_early() {
            self.stop = Some(StopReason::EarlyStop);
        } else if self.trainer.epochs_remaining() == 0 {
            self.stop = Some(StopReason::MaxEpochs);
        }
        Ok(report)
    }

    pub fn finish(self) -> NodeOutcome {
        NodeOutcome {
            weights: self.trainer.best_weights().clone(),
            history: self.trainer.history().clone(),
            reports: self.reports,
            stop: self.stop.unwrap_or(StopReason::Manual),
        }
    }
}

/// Options for [`run_node`] beyond the node configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Written after every round.
    pub checkpoint_path: Option<std::path::PathBuf>,
    pub resume_from: Option<Checkpoint>,
}

/// Runs one node to completion over an already joined transport.
pub fn run_node<T: Transport + ?Sized>(
    cfg: NodeConfig,
    transport: &mut T,
    stop: &StopHandle,
    opts: &RunOptions,
) -> Result<NodeOutcome, NodeError> {
    let result = drive(cfg, transport, stop, opts);
    stop.mark_finished();
    result
}

fn drive<T: Transport + ?Sized>(
    cfg: NodeConfig,
    transport: &mut T,
    stop: &StopHandle,
    opts: &RunOptions,
) -> Result<NodeOutcome, NodeError> {
    let mut node = match &opts.resume_from {
        Some(ck) => SwarmNode::resume(cfg, ck.clone())?,
        None => SwarmNode::new(cfg)?,
    };
    let mut collector = UpdateCollector::new();
    let (window, ack_timeout) = (node.cfg.collect_window, node.cfg.ack_timeout);
    loop {
        node.set_clock(transport.now_ms());
        let Some(local) = node.train_phase(stop.flag())? else {
            break;
        };
        let table = transport.table();
        let report = broadcast_weights(&node.outgoing(&local), &table, transport, ack_timeout);
        info!(
            "node {}: round {} broadcast acked by {}/{} peers",
            node.id(),
            node.round(),
            report.acked(),
            table.len()
        );
        let peers = match collector.collect(node.round(), window, transport) {
            Ok(p) => p,
            Err(source) => {
                return Err(NodeError::TransportDown {
                    source,
                    partial: node.reports.clone(),
                })
            }
        };
        node.set_clock(transport.now_ms());
        node.merge_phase(&local, peers, stop.flag())?;
        if let Some(path) = &opts.checkpoint_path {
            save_checkpoint(&node.checkpoint(), path)?;
        }
        if node.stop_reason().is_some() {
            break;
        }
    }
    announce_leave(transport, ack_timeout);
    Ok(node.finish())
}

/// Tells every known peer this node is going away. Best effort.
pub fn announce_leave<T: Transport + ?Sized>(transport: &mut T, timeout: Duration) {
    let msg = SwarmMessage::new(transport.node_id(), Payload::Leave);
    let peers: Vec<String> = transport
        .table()
        .iter()
        .map(|(_, e)| e.addr.clone())
        .collect();
    for addr in peers {
        let _ = transport.request(&addr, &msg, timeout);
    }
}

/// Local-only baseline: the node's own shard, no exchanges.
pub fn run_standalone(cfg: &NodeConfig) -> Result<(WeightVector, EpochHistory), NodeError> {
    cfg.validate()?;
    let mut trainer = LocalTrainer::new(
        cfg.model,
        cfg.effective_train(),
        init_model(&cfg.model, cfg.init_seed),
    )?;
    trainer.run_epochs(&cfg.shard, cfg.max_epochs, None)?;
    Ok((trainer.best_weights().clone(), trainer.history().clone()))
}

/// Pools every shard's training and validation rows into one shard.
pub fn pool_shards(shards: &[NodeShard]) -> Result<NodeShard, crate::data::DataError> {
    let trains: Vec<&Dataset> = shards.iter().map(|s| &s.train).collect();
    let vals: Vec<&Dataset> = shards.iter().map(|s| &s.validation).collect();
    Ok(NodeShard {
        node_id: u32::MAX,
        train: Dataset::concat(&trains)?,
        validation: Dataset::concat(&vals)?,
    })
}

/// Full-data baseline: standalone training on the union of all shards.
pub fn run_centralized(
    shards: &[NodeShard],
    template: &NodeConfig,
) -> Result<(WeightVector, EpochHistory), NodeError> {
    let pooled = pool_shards(shards).map_err(|e| NodeError::Config(e.to_string()))?;
    let cfg = NodeConfig {
        shard: pooled,
        ..template.clone()
    };
    run_standalone(&cfg)
}
