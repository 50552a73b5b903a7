//! One real-transport node driven by a JSON config file.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::aggregation::{GatePolicy, MergeScheme};
use crate::data::{load_csv, Dataset, NodeShard};
use crate::net::membership::{gossip_round, join};
use crate::net::secure::SecurityConfig;
use crate::net::tcp::TcpTransport;
use crate::net::transport::Transport;
use crate::net::NetError;
use crate::node::{
    load_checkpoint, run_node, signal_stop, NodeConfig, RoundReport, RunOptions, StopHandle,
    StopReason,
};
use crate::trainer::{EpochHistory, ModelSpec, TrainConfig};

/// `run-node` configuration. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaemonConfig {
    pub node_id: u32,
    pub listen: String,
    #[serde(default)]
    pub seeds: Vec<String>,
    pub train_csv: PathBuf,
    #[serde(default)]
    pub val_csv: Option<PathBuf>,
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
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
    /// Shared by every node so all start from the same weights.
    #[serde(default)]
    pub init_seed: u64,
    /// Block before training until this many peers are known.
    #[serde(default)]
    pub wait_for_peers: usize,
    #[serde(default = "default_wait")]
    pub wait_timeout_ms: u64,
    /// Written after every round.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Resume from `checkpoint` when it exists.
    #[serde(default)]
    pub resume: bool,
    /// Creating this file requests a manual stop.
    #[serde(default)]
    pub stop_file: Option<PathBuf>,
    #[serde(default)]
    pub security: Option<SecurityConfig>,
    /// Final weights, history and round reports as JSON.
    #[serde(default)]
    pub out: Option<PathBuf>,
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
    2_000
}
fn default_ack() -> u64 {
    5_000
}
fn default_wait() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaemonOutput {
    pub node_id: u32,
    pub address: String,
    pub stop: StopReason,
    pub weights: Vec<f64>,
    pub history: EpochHistory,
    pub rounds: Vec<RoundReport>,
}

impl DaemonConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.train_csv);
        for p in [
            &mut cfg.val_csv,
            &mut cfg.checkpoint,
            &mut cfg.stop_file,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    fn node_config(&self) -> Result<NodeConfig, HarnessError> {
        let train = load_csv(&self.train_csv)?;
        let validation = match &self.val_csv {
            Some(p) => load_csv(p)?,
            None => Dataset::empty(train.dim(), 0),
        };
        let model = ModelSpec {
            input_dim: train.dim(),
            hidden_dim: self.hidden_dim,
        };
        let shard = NodeShard {
            node_id: self.node_id,
            train,
            validation,
        };
        let mut cfg = NodeConfig::new(self.node_id, shard, model, self.train);
        cfg.init_seed = self.init_seed;
        cfg.exchange_interval = self.exchange_interval;
        cfg.max_epochs = self.max_epochs;
        cfg.gate = self.gate;
        cfg.scheme = self.scheme;
        cfg.collect_window = Duration::from_millis(self.collect_window_ms);
        cfg.ack_timeout = Duration::from_millis(self.ack_timeout_ms);
        cfg.validate()
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        Ok(cfg)
    }
}

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Binds, joins, trains to completion and writes the output file.
pub fn run_daemon(dc: &DaemonConfig) -> Result<DaemonOutput, HarnessError> {
    let cfg = dc.node_config()?;
    let mut transport = TcpTransport::bind(dc.node_id, &dc.listen, dc.security.clone())
        .map_err(io_err(Path::new(&dc.listen)))?;
    info!("node {} listening on {}", dc.node_id, transport.address());
    // Seeds may still be starting up; keep trying until the wait budget runs out.
    let started = Instant::now();
    let wait = Duration::from_millis(dc.wait_timeout_ms);
    loop {
        match join(&dc.seeds, &mut transport) {
            Ok(_) => break,
            Err(NetError::NoPeersReachable) if started.elapsed() < wait => {
                std::thread::sleep(Duration::from_millis(250));
            }
            Err(e) => return Err(runtime(e)),
        }
    }
    let ack = Duration::from_millis(dc.ack_timeout_ms);
    gossip_round(&mut transport, ack);

    while transport.table().len() < dc.wait_for_peers {
        if started.elapsed() > wait {
            return Err(runtime(format!(
                "only {} of {} peers joined in time",
                transport.table().len(),
                dc.wait_for_peers
            )));
        }
        std::thread::sleep(Duration::from_millis(100));
        gossip_round(&mut transport, ack);
    }

    let resume_from = match (&dc.checkpoint, dc.resume) {
        (Some(p), true) if p.exists() => Some(load_checkpoint(p).map_err(runtime)?),
        _ => None,
    };
    let opts = RunOptions {
        checkpoint_path: dc.checkpoint.clone(),
        resume_from,
    };
    let handle = StopHandle::new();
    let watcher = dc.stop_file.clone().map(|path| {
        let h = handle.clone();
        std::thread::spawn(move || {
            while !h.is_finished() {
                if path.exists() {
                    let _ = signal_stop(&h);
                    return;
                }
                std::thread::sleep(Duration::from_millis(200));
            }
        })
    });
    let outcome = run_node(cfg, &mut transport, &handle, &opts).map_err(runtime)?;
    if let Some(w) = watcher {
        let _ = w.join();
    }

    let out = DaemonOutput {
        node_id: dc.node_id,
        address: transport.address().to_string(),
        stop: outcome.stop,
        weights: outcome.weights.values().to_vec(),
        history: outcome.history,
        rounds: outcome.reports,
    };
    if let Some(path) = &dc.out {
        let text = serde_json::to_string_pretty(&out).expect("output serializes") + "\n";
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(out)
}
