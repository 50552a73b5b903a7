//! Peer table, the responder side of the protocol, and seed-list discovery.

use std::collections::BTreeMap;
use std::time::Duration;

use log::{debug, warn};

use super::codec::{AckStatus, Kind, Payload, PeerInfo, SwarmMessage, WeightsBody};
use super::transport::{DeliveryError, Transport};
use super::NetError;

/// Consecutive broadcast timeouts after which a peer is evicted.
pub const EVICT_AFTER_FAILURES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerEntry {
    pub addr: String,
    pub last_seen_ms: u64,
    pub failures: u32,
}

/// `host:port` with a non-empty host and a numeric port.
pub fn is_valid_addr(addr: &str) -> bool {
    match addr.rsplit_once(':') {
        Some((host, port)) => {
            !host.is_empty() && !host.contains(char::is_whitespace) && port.parse::<u16>().is_ok()
        }
        None => false,
    }
}

/// Known peers of one node. Never contains the node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerTable {
    local_id: u32,
    entries: BTreeMap<u32, PeerEntry>,
}

impl PeerTable {
    pub fn new(local_id: u32) -> Self {
        Self {
            local_id,
            entries: BTreeMap::new(),
        }
    }

    pub fn local_id(&self) -> u32 {
        self.local_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&PeerEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &PeerEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    /// Inserts or refreshes a peer. Entries for the local node or with a
    /// malformed address are ignored. An existing entry is only replaced by
    /// a strictly newer sighting.
    pub fn upsert(&mut self, id: u32, addr: &str, last_seen_ms: u64) -> bool {
        if id == self.local_id || !is_valid_addr(addr) {
            return false;
        }
        match self.entries.get_mut(&id) {
            Some(e) if last_seen_ms <= e.last_seen_ms => false,
            Some(e) => {
                e.addr = addr.to_string();
                e.last_seen_ms = last_seen_ms;
                e.failures = 0;
                true
            }
            None => {
                self.entries.insert(
                    id,
                    PeerEntry {
                        addr: addr.to_string(),
                        last_seen_ms,
                        failures: 0,
                    },
                );
                true
            }
        }
    }

    /// Newest `last_seen` wins.
    pub fn merge(&mut self, infos: &[PeerInfo]) -> usize {
        infos
            .iter()
            .filter(|p| self.upsert(p.node_id, &p.addr, p.last_seen_ms))
            .count()
    }

    pub fn remove(&mut self, id: u32) -> Option<PeerEntry> {
        self.entries.remove(&id)
    }

    pub fn record_success(&mut self, id: u32, now_ms: u64) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.failures = 0;
            e.last_seen_ms = e.last_seen_ms.max(now_ms);
        }
    }

    /// Counts a failed delivery; returns true when the peer was evicted.
    pub fn record_failure(&mut self, id: u32) -> bool {
        let Some(e) = self.entries.get_mut(&id) else {
            return false;
        };
        e.failures += 1;
        if e.failures >= EVICT_AFTER_FAILURES {
            self.entries.remove(&id);
            return true;
        }
        false
    }

    pub fn to_infos(&self) -> Vec<PeerInfo> {
        self.entries
            .iter()
            .map(|(&node_id, e)| PeerInfo {
                node_id,
                addr: e.addr.clone(),
                last_seen_ms: e.last_seen_ms,
            })
            .collect()
    }
}

/// What a node does with one inbound frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub reply: Option<SwarmMessage>,
    pub delivered: Option<SwarmMessage>,
}

fn ack(local_id: u32, acked: Kind, status: AckStatus, round: u32) -> Option<SwarmMessage> {
    Some(SwarmMessage::new(
        local_id,
        Payload::Ack {
            acked,
            status,
            round,
        },
    ))
}

/// Protocol handler shared by every transport.
///
/// HELLO registers the sender and is answered with the full table (plus the
/// responder itself); a HELLO reusing a known id from a different address,
/// or the responder's own id, is refused with an `IdCollision` ACK. WEIGHTS
/// is queued for the node and ACKed. LEAVE removes the sender.
pub fn respond(
    table: &mut PeerTable,
    local_addr: &str,
    now_ms: u64,
    msg: SwarmMessage,
) -> Response {
    let me = table.local_id();
    let sender = msg.sender_id;
    match msg.payload {
        Payload::Hello { ref listen_addr } => {
            let clash = sender == me
                || table
                    .get(sender)
                    .is_some_and(|e| !listen_addr.is_empty() && e.addr != *listen_addr);
            if clash {
                warn!("node {me}: id collision for {sender} from {listen_addr:?}");
                return Response {
                    reply: ack(me, Kind::Hello, AckStatus::IdCollision, 0),
                    delivered: None,
                };
            }
            if !listen_addr.is_empty() {
                table.upsert(sender, listen_addr, now_ms);
            }
            let mut infos = table.to_infos();
            infos.retain(|p| p.node_id != sender);
            infos.push(PeerInfo {
                node_id: me,
                addr: local_addr.to_string(),
                last_seen_ms: now_ms,
            });
            Response {
                reply: Some(SwarmMessage::new(me, Payload::PeerList(infos))),
                delivered: None,
            }
        }
        Payload::PeerList(ref infos) => {
            table.merge(infos);
            Response {
                reply: ack(me, Kind::PeerList, AckStatus::Ok, 0),
                delivered: None,
            }
        }
        Payload::Weights(WeightsBody { round, .. }) => {
            table.record_success(sender, now_ms);
            Response {
                reply: ack(me, Kind::Weights, AckStatus::Ok, round),
                delivered: Some(msg),
            }
        }
        Payload::Leave => {
            table.remove(sender);
            debug!("node {me}: peer {sender} left");
            Response {
                reply: ack(me, Kind::Leave, AckStatus::Ok, 0),
                delivered: None,
            }
        }
        Payload::Ack { .. } => Response {
            reply: None,
            delivered: None,
        },
    }
}

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_millis(5_000);

fn hello<T: Transport + ?Sized>(
    transport: &mut T,
    addr: &str,
    timeout: Duration,
) -> Result<Vec<PeerInfo>, NetError> {
    let msg = SwarmMessage::new(
        transport.node_id(),
        Payload::Hello {
            listen_addr: transport.address().to_string(),
        },
    );
    match transport.request(addr, &msg, timeout)?.payload {
        Payload::PeerList(infos) => Ok(infos),
        Payload::Ack {
            status: AckStatus::IdCollision,
            ..
        } => Err(NetError::IdCollision(transport.node_id())),
        other => Err(NetError::Delivery(DeliveryError::Protocol(format!(
            "expected PEER_LIST, got {:?}",
            other.kind()
        )))),
    }
}

/// Announces this node to every seed and merges the returned tables.
///
/// An empty seed list bootstraps a new swarm. At least one seed must answer
/// otherwise.
pub fn join<T: Transport + ?Sized>(
    seed_peers: &[String],
    transport: &mut T,
) -> Result<PeerTable, NetError> {
    join_with_timeout(seed_peers, transport, DEFAULT_REQUEST_TIMEOUT)
}

pub fn join_with_timeout<T: Transport + ?Sized>(
    seed_peers: &[String],
    transport: &mut T,
    timeout: Duration,
) -> Result<PeerTable, NetError> {
    let mut reached = 0;
    for addr in seed_peers {
        match hello(transport, addr, timeout) {
            Ok(infos) => {
                reached += 1;
                if infos
                    .iter()
                    .any(|p| p.node_id == transport.node_id() && p.addr != transport.address())
                {
                    return Err(NetError::IdCollision(transport.node_id()));
                }
                transport.with_table(&mut |t| {
                    t.merge(&infos);
                });
            }
            Err(NetError::IdCollision(id)) => return Err(NetError::IdCollision(id)),
            Err(e) => warn!("node {}: seed {addr} unreachable: {e}", transport.node_id()),
        }
    }
    if !seed_peers.is_empty() && reached == 0 {
        return Err(NetError::NoPeersReachable);
    }
    Ok(transport.table())
}

/// One gossip pass: HELLO every known peer and merge their tables.
/// Returns how many peers answered.
pub fn gossip_round<T: Transport + ?Sized>(transport: &mut T, timeout: Duration) -> usize {
    let targets: Vec<String> = transport
        .table()
        .iter()
        .map(|(_, e)| e.addr.clone())
        .collect();
    let mut answered = 0;
    for addr in targets {
        match hello(transport, &addr, timeout) {
            Ok(infos) => {
                answered += 1;
                transport.with_table(&mut |t| {
                    t.merge(&infos);
                });
            }
            Err(e) => debug!("node {}: gossip to {addr} failed: {e}", transport.node_id()),
        }
    }
    answered
}
