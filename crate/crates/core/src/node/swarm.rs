//! Deterministic N-node swarm over the simulated network.
//!
//! Nodes advance in lockstep phases: every active node trains its K epochs,
//! all clocks are aligned to a common round start, every node gossips and
//! broadcasts, then every node collects for its window and merges. Each
//! phase visits nodes in id order, so one seed fixes every byte of output.

use std::collections::BTreeMap;
use std::time::Duration;

use log::{info, warn};

use super::{announce_leave, NodeConfig, NodeError, NodeOutcome, StopHandle, SwarmNode};
use crate::aggregation::ModelUpdate;
use crate::net::exchange::{broadcast_weights, UpdateCollector};
use crate::net::membership::{gossip_round, join_with_timeout};
use crate::net::sim::{sim_addr, SimEndpoint, SimNet, SimNetConfig, TranscriptEntry};
use crate::net::transport::Transport;
use crate::net::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct SimSwarmOptions {
    pub net: SimNetConfig,
    /// HELLO retries per joining node before giving up.
    pub join_attempts: usize,
    /// Re-gossip before every broadcast so lossy links heal evictions.
    pub gossip_each_round: bool,
}

impl Default for SimSwarmOptions {
    fn default() -> Self {
        Self {
            net: SimNetConfig::default(),
            join_attempts: 20,
            gossip_each_round: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwarmRun {
    pub outcomes: BTreeMap<u32, NodeOutcome>,
    pub transcript: Vec<TranscriptEntry>,
}

struct Member {
    node: SwarmNode,
    ep: SimEndpoint,
    collector: UpdateCollector,
    pending: Option<ModelUpdate>,
    done: bool,
}

fn join_retrying(
    ep: &mut SimEndpoint,
    seed: &str,
    cfg: &NodeConfig,
    attempts: usize,
) -> Result<(), NodeError> {
    let mut last = NetError::NoPeersReachable;
    for _ in 0..attempts.max(1) {
        match join_with_timeout(&[seed.to_string()], ep, cfg.ack_timeout) {
            Ok(_) => return Ok(()),
            Err(NetError::IdCollision(id)) => return Err(NetError::IdCollision(id).into()),
            Err(e) => last = e,
        }
    }
    Err(last.into())
}

/// Runs every configured node to completion. Node 0 (lowest id) bootstraps
/// the swarm; the others join through it and then gossip once.
pub fn run_sim_swarm(
    configs: Vec<NodeConfig>,
    opts: &SimSwarmOptions,
    stop: &StopHandle,
) -> Result<SwarmRun, NodeError> {
    let result = drive(configs, opts, stop);
    stop.mark_finished();
    result
}

fn drive(
    mut configs: Vec<NodeConfig>,
    opts: &SimSwarmOptions,
    stop: &StopHandle,
) -> Result<SwarmRun, NodeError> {
    if configs.is_empty() {
        return Err(NodeError::Config("swarm needs at least one node".into()));
    }
    configs.sort_by_key(|c| c.node_id);
    if configs.windows(2).any(|w| w[0].node_id == w[1].node_id) {
        return Err(NodeError::Config("duplicate node ids".into()));
    }
    let net = SimNet::new(opts.net.clone()).map_err(NodeError::Config)?;

    let mut members = Vec::with_capacity(configs.len());
    let seed_addr = sim_addr(configs[0].node_id);
    for (i, cfg) in configs.into_iter().enumerate() {
        let mut ep = net.endpoint(cfg.node_id);
        if i > 0 {
            join_retrying(&mut ep, &seed_addr, &cfg, opts.join_attempts)?;
        }
        members.push(Member {
            node: SwarmNode::new(cfg)?,
            ep,
            collector: UpdateCollector::new(),
            pending: None,
            done: false,
        });
    }
    for m in &mut members {
        let timeout = m.node.config().ack_timeout;
        gossip_round(&mut m.ep, timeout);
    }

    loop {
        for m in members.iter_mut().filter(|m| !m.done) {
            m.node.set_clock(m.ep.now_ms());
            m.pending = m.node.train_phase(stop.flag())?;
            if m.pending.is_none() {
                m.done = true;
                announce_leave(&mut m.ep, m.node.config().ack_timeout);
            }
        }
        if members.iter().all(|m| m.done) {
            break;
        }

        let start = members.iter().map(|m| m.ep.now_ms()).max().unwrap_or(0);
        for m in members.iter_mut() {
            m.ep.advance_to(start);
        }
        for m in members.iter_mut().filter(|m| !m.done) {
            let timeout = m.node.config().ack_timeout;
            if opts.gossip_each_round {
                gossip_round(&mut m.ep, timeout);
            }
            let local = m.pending.as_ref().expect("active node has an update");
            let outgoing = m.node.outgoing(local);
            let table = m.ep.table();
            broadcast_weights(&outgoing, &table, &mut m.ep, timeout);
        }
        for m in members.iter_mut().filter(|m| !m.done) {
            let window: Duration = m.node.config().collect_window;
            let round = m.node.round();
            let peers = match m.collector.collect(round, window, &mut m.ep) {
                Ok(p) => p,
                Err(source) => {
                    return Err(NodeError::TransportDown {
                        source,
                        partial: m.node.reports().to_vec(),
                    })
                }
            };
            let local = m.pending.take().expect("active node has an update");
            m.node.set_clock(m.ep.now_ms());
            let report = m.node.merge_phase(&local, peers, stop.flag())?;
            if report.peers_heard == 0 && !m.ep.table().is_empty() {
                warn!(
                    "node {}: round {} heard no peers",
                    report.node, report.round
                );
            }
            if m.node.stop_reason().is_some() {
                m.done = true;
                announce_leave(&mut m.ep, m.node.config().ack_timeout);
            }
        }
    }

    let transcript = net.transcript();
    info!("sim swarm finished: {} frames routed", transcript.len());
    let outcomes = members
        .into_iter()
        .map(|m| (m.node.id(), m.node.finish()))
        .collect();
    Ok(SwarmRun {
        outcomes,
        transcript,
    })
}
