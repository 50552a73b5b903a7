use std::collections::BTreeMap;
use std::sync::{Arc, Barrier};

use crate::net::membership::{gossip_round, join};
use crate::net::tcp::TcpTransport;
use crate::net::transport::Transport;
use crate::node::{run_node, NodeConfig, NodeError, NodeOutcome, RunOptions, StopHandle};

/// Runs the swarm over localhost TCP, one thread per node. Node 0 binds
/// first and is every other node's seed. Wall-clock timing makes the
/// outcome nondeterministic; use it for integration checks, not numbers.
pub fn run_tcp_swarm(configs: Vec<NodeConfig>) -> Result<BTreeMap<u32, NodeOutcome>, NodeError> {
    let mut transports = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let t = TcpTransport::bind(cfg.node_id, "127.0.0.1:0", None)
            .map_err(|e| NodeError::Config(format!("bind failed: {e}")))?;
        transports.push(t);
    }
    let seed = transports.first().map(|t| t.address().to_string());
    for t in transports.iter_mut().skip(1) {
        join(&[seed.clone().expect("non-empty")], t)?;
    }
    for t in transports.iter_mut() {
        gossip_round(t, crate::net::membership::DEFAULT_REQUEST_TIMEOUT);
    }

    let barrier = Arc::new(Barrier::new(configs.len()));
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .into_iter()
            .zip(transports)
            .map(|(cfg, mut transport)| {
                let barrier = Arc::clone(&barrier);
                s.spawn(move || {
                    barrier.wait();
                    let id = cfg.node_id;
                    let out = run_node(
                        cfg,
                        &mut transport,
                        &StopHandle::new(),
                        &RunOptions::default(),
                    );
                    // Keep answering peers until everyone is done.
                    barrier.wait();
                    out.map(|o| (id, o))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(NodeError::Config("node thread panicked".into())))
            })
            .collect()
    })
}
