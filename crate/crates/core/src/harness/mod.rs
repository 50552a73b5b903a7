//! Scenario runner: builds data per seed, trains the centralized, standalone
//! and swarm arms, and scores every model on one shared test set.

mod daemon;
mod real;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{GatePolicy, MergeScheme};
use crate::data::{partition, split, synth_dataset, DataError, Dataset, NodeShard, PartitionPlan};
use crate::metrics::{confusion_at_threshold, davies_bouldin, MetricsReport, DEFAULT_THRESHOLD};
use crate::net::sim::{Fate, SimNetConfig};
use crate::node::{
    pool_shards, run_centralized, run_sim_swarm, run_standalone, Behavior, NodeConfig, RoundReport,
    SimSwarmOptions, StopHandle, StopReason,
};
use crate::params::WeightVector;
use crate::trainer::{evaluate_auc, ModelSpec, TrainConfig};

pub use daemon::{run_daemon, DaemonConfig, DaemonOutput};
pub use real::run_tcp_swarm;
pub use report::{
    compare_report, read_results, render_csv, render_text, ArmSummary, MissingCell,
    ScenarioSummary, CSV_HEADER,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("no results to report")]
    NoResults,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub samples: usize,
    pub dim: usize,
    pub class_sep: f64,
    #[serde(default = "half")]
    pub positive_frac: f64,
    /// Share of the data in the pool that nodes draw from.
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    /// Share reserved for validation; joins the node pool too, since each
    /// node carves its own validation rows out of its allocation.
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
}

fn half() -> f64 {
    0.5
}
fn default_train_frac() -> f64 {
    0.7
}
fn default_val_frac() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTemplate {
    #[serde(default)]
    pub hidden_dim: usize,
    pub train: TrainConfig,
    #[serde(default = "default_interval")]
    pub exchange_interval: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub gate: GatePolicy,
    #[serde(default = "default_scheme")]
    pub scheme: MergeScheme,
    #[serde(default = "default_window")]
    pub collect_window_ms: u64,
    #[serde(default = "default_ack")]
    pub ack_timeout_ms: u64,
    /// Share of each node's rows kept as its local validation set.
    #[serde(default = "default_node_val")]
    pub node_val_frac: f64,
}

fn default_interval() -> usize {
    crate::node::DEFAULT_EXCHANGE_INTERVAL
}
fn default_max_epochs() -> usize {
    crate::node::DEFAULT_MAX_EPOCHS
}
fn default_scheme() -> MergeScheme {
    MergeScheme::Fedavg
}
fn default_window() -> u64 {
    1_000
}
fn default_ack() -> u64 {
    500
}
fn default_node_val() -> f64 {
    0.125
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arms {
    pub centralized: bool,
    pub standalone: bool,
    pub swarm: bool,
}

impl Default for Arms {
    fn default() -> Self {
        Self {
            centralized: true,
            standalone: true,
            swarm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    pub name: String,
    pub dataset: DatasetSpec,
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub class_bias: Option<Vec<f64>>,
    /// Node id → multiplier on its nominal fraction.
    #[serde(default)]
    pub downsample: BTreeMap<u32, f64>,
    pub seeds: Vec<u64>,
    pub node: NodeTemplate,
    #[serde(default)]
    pub network: SimNetConfig,
    #[serde(default)]
    pub arms: Arms,
    /// Fault injection on the swarm arm, by node id.
    #[serde(default)]
    pub behaviors: BTreeMap<u32, Behavior>,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let spec: Self = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn node_count(&self) -> usize {
        self.fractions.len()
    }

    /// Fractions after downsampling.
    pub fn effective_fractions(&self) -> Vec<f64> {
        self.fractions
            .iter()
            .enumerate()
            .map(|(k, f)| f * self.downsample.get(&(k as u32)).copied().unwrap_or(1.0))
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.version != SCHEMA_VERSION {
            return bad(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                self.version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if let Some((&k, &f)) = self
            .downsample
            .iter()
            .find(|(&k, &f)| k as usize >= self.node_count() || !(f > 0.0 && f <= 1.0))
        {
            return bad(format!("downsample {f} for node {k} is invalid"));
        }
        if let Some(&k) = self
            .behaviors
            .keys()
            .find(|&&k| k as usize >= self.node_count())
        {
            return bad(format!("behavior for unknown node {k}"));
        }
        let d = &self.dataset;
        if d.train_frac <= 0.0 || d.val_frac < 0.0 || d.train_frac + d.val_frac >= 1.0 {
            return bad("dataset train_frac/val_frac must leave a test set".into());
        }
        self.plan(0).validate()?;
        self.network.validate().map_err(HarnessError::InvalidSpec)?;
        self.node
            .gate
            .validate()
            .map_err(HarnessError::InvalidSpec)?;
        if self.node.exchange_interval == 0 || self.node.max_epochs < self.node.exchange_interval {
            return bad("need 1 <= exchange_interval <= max_epochs".into());
        }
        Ok(())
    }

    fn plan(&self, seed: u64) -> PartitionPlan {
        PartitionPlan {
            fractions: self.effective_fractions(),
            class_bias: self.class_bias.clone(),
            val_frac: self.node.node_val_frac,
            seed,
        }
    }

    fn model(&self) -> ModelSpec {
        ModelSpec {
            input_dim: self.dataset.dim,
            hidden_dim: self.node.hidden_dim,
        }
    }
}

/// Independent per-purpose seed streams from one scenario seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined input.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_NET: u64 = 5;
const STREAM_TRAIN: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Centralized,
    Standalone,
    Swarm,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Centralized => "centralized",
            Arm::Standalone => "standalone",
            Arm::Swarm => "swarm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `None` for the centralized model, which belongs to no single node.
    pub node: Option<u32>,
    pub arm: Arm,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

impl Cell {
    fn failed(node: Option<u32>, arm: Arm, error: String) -> Self {
        warn!("{} arm, node {node:?} failed: {error}", arm.as_str());
        Self {
            node,
            arm,
            ok: false,
            error: Some(error),
            metrics: None,
            train_auc: None,
            val_auc: None,
            dbi: None,
            epochs: None,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub frames: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub partitioned: usize,
}

/// Outcome of one (scenario, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub nodes: usize,
    pub arms: Arms,
    /// SHA-256 of the held-out test set shared by every arm.
    pub test_hash: String,
    pub test_size: usize,
    pub shard_sizes: Vec<usize>,
    /// `"hidden"` when DBI uses penultimate activations, `"raw"` for
    /// logistic models scored on input features.
    pub dbi_space: String,
    pub cells: Vec<Cell>,
    pub rounds: BTreeMap<u32, Vec<RoundReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkStats>,
    pub transport: String,
}

impl RunResult {
    pub fn cell(&self, node: Option<u32>, arm: Arm) -> Option<&Cell> {
        self.cells.iter().find(|c| c.node == node && c.arm == arm)
    }

    /// Test AUC of a successful cell.
    pub fn auc(&self, node: Option<u32>, arm: Arm) -> Option<f64> {
        self.cell(node, arm).and_then(|c| c.metrics).map(|m| m.auc)
    }

    pub fn file_name(&self) -> String {
        format!("{}_seed{}.json", self.scenario, self.seed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

/// Which transport carries the swarm arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwarmTransport {
    #[default]
    Sim,
    /// Localhost TCP, one thread per node, wall-clock collect windows.
    Tcp,
}

/// Data and configs for one seed, shared by every arm.
pub struct SeedSetup {
    pub test: Dataset,
    pub shards: Vec<NodeShard>,
    pub configs: Vec<NodeConfig>,
}

pub fn prepare_seed(spec: &ScenarioSpec, seed: u64) -> Result<SeedSetup, HarnessError> {
    let d = &spec.dataset;
    let ds = synth_dataset(
        d.samples,
        d.dim,
        d.class_sep,
        d.positive_frac,
        derive_seed(seed, STREAM_DATA),
    )?;
    let (train, val, test) = split(
        &ds,
        d.train_frac,
        d.val_frac,
        derive_seed(seed, STREAM_SPLIT),
    )?;
    let pool = Dataset::concat(&[&train, &val])?;
    let shards = partition(&pool, &spec.plan(derive_seed(seed, STREAM_PARTITION)))?;
    let model = spec.model();
    let init_seed = derive_seed(seed, STREAM_INIT);
    let configs = shards
        .iter()
        .map(|shard| {
            let t = &spec.node;
            let mut cfg = NodeConfig::new(
                shard.node_id,
                shard.clone(),
                model,
                TrainConfig {
                    seed: derive_seed(seed, STREAM_TRAIN + shard.node_id as u64),
                    ..t.train
                },
            );
            cfg.init_seed = init_seed;
            cfg.exchange_interval = t.exchange_interval;
            cfg.max_epochs = t.max_epochs;
            cfg.gate = t.gate;
            cfg.scheme = t.scheme;
            cfg.collect_window = Duration::from_millis(t.collect_window_ms);
            cfg.ack_timeout = Duration::from_millis(t.ack_timeout_ms);
            cfg
        })
        .collect();
    Ok(SeedSetup {
        test,
        shards,
        configs,
    })
}

fn score(
    model: &ModelSpec,
    weights: &WeightVector,
    shard: &NodeShard,
    test: &Dataset,
    node: Option<u32>,
    arm: Arm,
) -> Cell {
    let run = || -> Result<Cell, String> {
        let probs = model
            .forward(weights, test.features())
            .map_err(|e| e.to_string())?;
        let auc = evaluate_auc(model, weights, test).map_err(|e| e.to_string())?;
        let counts = confusion_at_threshold(&probs, test.labels(), DEFAULT_THRESHOLD);
        let mut metrics = MetricsReport::from_counts(auc, &counts);
        let train_auc = evaluate_auc(model, weights, &shard.train).map_err(|e| e.to_string())?;
        let val_auc = if shard.validation.has_both_classes() {
            evaluate_auc(model, weights, &shard.validation).map_err(|e| e.to_string())?
        } else {
            train_auc
        };
        metrics.gap = train_auc - val_auc;
        let (emb, width) = model
            .embed(weights, test.features())
            .map_err(|e| e.to_string())?;
        let clusters: Vec<usize> = test.labels().iter().map(|&l| l as usize).collect();
        let dbi = davies_bouldin(&emb, width, &clusters).ok();
        Ok(Cell {
            node,
            arm,
            ok: true,
            error: None,
            metrics: Some(metrics),
            train_auc: Some(train_auc),
            val_auc: Some(val_auc),
            dbi,
            epochs: None,
            stop: None,
        })
    };
    run().unwrap_or_else(|e| Cell::failed(node, arm, e))
}

/// Runs every enabled arm for one seed. Arm failures become failed cells.
pub fn run_seed(
    spec: &ScenarioSpec,
    seed: u64,
    transport: SwarmTransport,
) -> Result<RunResult, HarnessError> {
    spec.validate()?;
    let setup = prepare_seed(spec, seed)?;
    let model = spec.model();
    let mut cells = Vec::new();
    let mut rounds = BTreeMap::new();
    let mut network = None;

    if spec.arms.centralized {
        let template = &setup.configs[0];
        let cfg = NodeConfig {
            train: TrainConfig {
                seed: derive_seed(seed, STREAM_TRAIN + u32::MAX as u64),
                ..template.train
            },
            ..template.clone()
        };
        let cell = match (
            run_centralized(&setup.shards, &cfg),
            pool_shards(&setup.shards),
        ) {
            (Ok((w, hist)), Ok(pooled)) => Cell {
                epochs: Some(hist.len()),
                ..score(&model, &w, &pooled, &setup.test, None, Arm::Centralized)
            },
            (Err(e), _) => Cell::failed(None, Arm::Centralized, e.to_string()),
            (_, Err(e)) => Cell::failed(None, Arm::Centralized, e.to_string()),
        };
        cells.push(cell);
    }

    if spec.arms.standalone {
        for cfg in &setup.configs {
            let id = Some(cfg.node_id);
            cells.push(match run_standalone(cfg) {
                Ok((w, hist)) => Cell {
                    epochs: Some(hist.len()),
                    ..score(&model, &w, &cfg.shard, &setup.test, id, Arm::Standalone)
                },
                Err(e) => Cell::failed(id, Arm::Standalone, e.to_string()),
            });
        }
    }

    if spec.arms.swarm {
        let mut configs = setup.configs.clone();
        for cfg in &mut configs {
            if let Some(b) = spec.behaviors.get(&cfg.node_id) {
                cfg.behavior = *b;
            }
        }
        let outcome = match transport {
            SwarmTransport::Sim => {
                let opts = SimSwarmOptions {
                    net: SimNetConfig {
                        seed: derive_seed(seed ^ spec.network.seed, STREAM_NET),
                        ..spec.network.clone()
                    },
                    ..SimSwarmOptions::default()
                };
                run_sim_swarm(configs, &opts, &StopHandle::new()).map(|run| {
                    network = Some(network_stats(&run.transcript));
                    run.outcomes
                })
            }
            SwarmTransport::Tcp => run_tcp_swarm(configs),
        };
        match outcome {
            Ok(outcomes) => {
                for cfg in &setup.configs {
                    let id = cfg.node_id;
                    match outcomes.get(&id) {
                        Some(out) => {
                            cells.push(Cell {
                                epochs: Some(out.history.len()),
                                stop: Some(out.stop),
                                ..score(
                                    &model,
                                    &out.weights,
                                    &cfg.shard,
                                    &setup.test,
                                    Some(id),
                                    Arm::Swarm,
                                )
                            });
                            rounds.insert(id, out.reports.clone());
                        }
                        None => cells.push(Cell::failed(
                            Some(id),
                            Arm::Swarm,
                            "node produced no outcome".into(),
                        )),
                    }
                }
            }
            Err(e) => {
                for cfg in &setup.configs {
                    cells.push(Cell::failed(Some(cfg.node_id), Arm::Swarm, e.to_string()));
                }
            }
        }
    }

    Ok(RunResult {
        version: SCHEMA_VERSION,
        scenario: spec.name.clone(),
        seed,
        nodes: spec.node_count(),
        arms: spec.arms,
        test_hash: setup.test.content_hash(),
        test_size: setup.test.len(),
        shard_sizes: setup.shards.iter().map(NodeShard::sample_count).collect(),
        dbi_space: if model.hidden_dim > 0 {
            "hidden"
        } else {
            "raw"
        }
        .to_string(),
        cells,
        rounds,
        network,
        transport: match transport {
            SwarmTransport::Sim => "sim",
            SwarmTransport::Tcp => "tcp",
        }
        .to_string(),
    })
}

fn network_stats(transcript: &[crate::net::sim::TranscriptEntry]) -> NetworkStats {
    let mut s = NetworkStats {
        frames: transcript.len(),
        ..NetworkStats::default()
    };
    for e in transcript {
        match e.fate {
            Fate::Delivered { .. } => s.delivered += 1,
            Fate::Dropped => s.dropped += 1,
            Fate::Partitioned => s.partitioned += 1,
        }
    }
    s
}

/// Runs every seed; with `out`, writes `<scenario>_seed<k>.json` per seed
/// plus a `.timing.json` sidecar holding wall time, which is kept out of
/// the result file so reruns stay byte-identical.
pub fn run_scenario(
    spec: &ScenarioSpec,
    out: Option<&Path>,
    transport: SwarmTransport,
) -> Result<Vec<RunResult>, HarnessError> {
    spec.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut results = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let started = Instant::now();
        let result = run_seed(spec, seed, transport)?;
        let wall = started.elapsed();
        info!(
            "{} seed {seed}: done in {:.2}s",
            spec.name,
            wall.as_secs_f64()
        );
        if let Some(dir) = out {
            let path = dir.join(result.file_name());
            std::fs::write(&path, result.to_json()).map_err(io_err(&path))?;
            let timing = dir.join(format!("{}_seed{}.timing.json", spec.name, seed));
            let body = serde_json::json!({ "wall_time_s": wall.as_secs_f64() });
            std::fs::write(&timing, format!("{body}\n")).map_err(io_err(&timing))?;
        }
        results.push(result);
    }
    Ok(results)
}
