//! Deterministic in-memory network on a virtual clock.
//!
//! Every send resolves its fate immediately: a seeded draw decides whether
//! the frame is dropped and how long it travels. Delivered frames are handed
//! to the receiver's protocol handler and queue in its inbox stamped with
//! their arrival time; the receiver only sees them once its own clock,
//! advanced by collect windows, has reached that time. Replies travel back
//! the same way, and a request succeeds when the reply arrives within the
//! timeout. A single-threaded driver therefore reproduces the same transcript
//! for the same seed and workload.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{decode, encode, Kind, SwarmMessage};
use super::membership::{respond, PeerTable};
use super::transport::{DeliveryError, Inbound, Transport, TransportDown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNetConfig {
    pub latency_mean_ms: f64,
    #[serde(default)]
    pub latency_jitter_ms: f64,
    #[serde(default)]
    pub drop_prob: f64,
    /// Groups of node ids; nodes in different groups cannot reach each other.
    /// Nodes listed in no group form one implicit group of their own.
    #[serde(default)]
    pub partitions: Vec<Vec<u32>>,
    /// Per-directed-link drop probability overriding `drop_prob`; may be 1.
    #[serde(default)]
    pub link_drop: Vec<(u32, u32, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            latency_mean_ms: 20.0,
            latency_jitter_ms: 5.0,
            drop_prob: 0.0,
            partitions: Vec::new(),
            link_drop: Vec::new(),
            seed: 0,
        }
    }
}

impl SimNetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(format!("drop_prob {} outside [0, 1)", self.drop_prob));
        }
        if !(self.latency_mean_ms >= 0.0 && self.latency_jitter_ms >= 0.0) {
            return Err("latency must be nonnegative".into());
        }
        let mut seen = std::collections::HashSet::new();
        for id in self.partitions.iter().flatten() {
            if !seen.insert(*id) {
                return Err(format!("node {id} appears in two partitions"));
            }
        }
        if let Some((a, b, p)) = self
            .link_drop
            .iter()
            .find(|(_, _, p)| !(0.0..=1.0).contains(p))
        {
            return Err(format!("link {a}->{b} drop probability {p} outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Delivered { at_ms: u64 },
    Dropped,
    Partitioned,
}

/// One frame's journey, in send order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub sent_ms: u64,
    pub from: u32,
    pub to: u32,
    pub kind: u8,
    pub bytes: usize,
    pub fate: Fate,
}

struct SimNode {
    addr: String,
    table: PeerTable,
    clock_ms: u64,
    // (arrival, seq) → message
    inbox: BTreeMap<(u64, u64), SwarmMessage>,
}

struct SimState {
    cfg: SimNetConfig,
    rng: ChaCha8Rng,
    nodes: BTreeMap<u32, SimNode>,
    by_addr: HashMap<String, u32>,
    groups: HashMap<u32, usize>,
    transcript: Vec<TranscriptEntry>,
    seq: u64,
}

impl SimState {
    fn link_drop(&self, from: u32, to: u32) -> f64 {
        self.cfg
            .link_drop
            .iter()
            .find(|(a, b, _)| *a == from && *b == to)
            .map_or(self.cfg.drop_prob, |(_, _, p)| *p)
    }

    /// Draws the fate of one frame. Always consumes the same number of
    /// random values so one link's traffic cannot shift another's draws.
    fn route(&mut self, from: u32, to: u32, sent_ms: u64, frame: &[u8]) -> Fate {
        let drop_draw: f64 = self.rng.random();
        let jitter_draw: f64 = self.rng.random_range(-1.0..=1.0);
        let fate = if self.groups.get(&from) != self.groups.get(&to) {
            Fate::Partitioned
        } else if drop_draw < self.link_drop(from, to) {
            Fate::Dropped
        } else {
            let latency = (self.cfg.latency_mean_ms + jitter_draw * self.cfg.latency_jitter_ms)
                .max(0.0)
                .round() as u64;
            Fate::Delivered {
                at_ms: sent_ms + latency,
            }
        };
        self.seq += 1;
        self.transcript.push(TranscriptEntry {
            seq: self.seq,
            sent_ms,
            from,
            to,
            kind: frame.get(5).copied().unwrap_or(0),
            bytes: frame.len(),
            fate,
        });
        fate
    }
}

/// Shared handle to one simulated network. Cheap to clone; not `Send`.
#[derive(Clone)]
pub struct SimNet {
    state: Rc<RefCell<SimState>>,
}

pub fn sim_addr(id: u32) -> String {
    format!("node{id}.sim:7000")
}

impl SimNet {
    pub fn new(cfg: SimNetConfig) -> Result<Self, String> {
        cfg.validate()?;
        let groups = cfg
            .partitions
            .iter()
            .enumerate()
            .flat_map(|(g, ids)| ids.iter().map(move |&id| (id, g + 1)))
            .collect();
        Ok(Self {
            state: Rc::new(RefCell::new(SimState {
                rng: ChaCha8Rng::seed_from_u64(cfg.seed),
                cfg,
                nodes: BTreeMap::new(),
                by_addr: HashMap::new(),
                groups,
                transcript: Vec::new(),
                seq: 0,
            })),
        })
    }

    /// Attaches node `id` at [`sim_addr`]`(id)`.
    pub fn endpoint(&self, id: u32) -> SimEndpoint {
        self.endpoint_at(id, &sim_addr(id))
    }

    /// Attaches a node at an explicit address. Reusing an id replaces the
    /// previous attachment's routing entry but keeps both addresses valid.
    pub fn endpoint_at(&self, id: u32, addr: &str) -> SimEndpoint {
        let mut st = self.state.borrow_mut();
        st.by_addr.insert(addr.to_string(), id);
        st.nodes.entry(id).or_insert_with(|| SimNode {
            addr: addr.to_string(),
            table: PeerTable::new(id),
            clock_ms: 0,
            inbox: BTreeMap::new(),
        });
        SimEndpoint {
            net: self.clone(),
            id,
            addr: addr.to_string(),
        }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.state.borrow().transcript.clone()
    }

    /// Frames still waiting in `id`'s inbox.
    pub fn queued(&self, id: u32) -> usize {
        self.state
            .borrow()
            .nodes
            .get(&id)
            .map_or(0, |n| n.inbox.len())
    }
}

pub struct SimEndpoint {
    net: SimNet,
    id: u32,
    addr: String,
}

impl SimEndpoint {
    pub fn net(&self) -> &SimNet {
        &self.net
    }

    /// Moves this node's clock forward; never backwards.
    pub fn advance_to(&mut self, t_ms: u64) {
        let mut st = self.net.state.borrow_mut();
        let node = st.nodes.get_mut(&self.id).expect("attached");
        node.clock_ms = node.clock_ms.max(t_ms);
    }
}

impl Transport for SimEndpoint {
    fn node_id(&self) -> u32 {
        self.id
    }

    fn address(&self) -> &str {
        &self.addr
    }

    fn now_ms(&self) -> u64 {
        self.net.state.borrow().nodes[&self.id].clock_ms
    }

    fn request(
        &mut self,
        addr: &str,
        msg: &SwarmMessage,
        timeout: Duration,
    ) -> Result<SwarmMessage, DeliveryError> {
        let frame = encode(msg)?;
        let mut guard = self.net.state.borrow_mut();
        let st = &mut *guard;
        let Some(&to) = st.by_addr.get(addr) else {
            return Err(DeliveryError::ConnRefused);
        };
        let now = st.nodes[&self.id].clock_ms;
        let Fate::Delivered { at_ms: arrived } = st.route(self.id, to, now, &frame) else {
            return Err(DeliveryError::Timeout);
        };

        let inbound = decode(&frame)?;
        let target = st.nodes.get_mut(&to).expect("routed node exists");
        let target_addr = target.addr.clone();
        let response = respond(&mut target.table, &target_addr, arrived, inbound);
        if let Some(delivered) = response.delivered {
            let seq = st.seq;
            st.nodes
                .get_mut(&to)
                .expect("routed node exists")
                .inbox
                .insert((arrived, seq), delivered);
        }
        let Some(reply) = response.reply else {
            return Err(DeliveryError::Timeout);
        };
        let reply_frame = encode(&reply)?;
        match st.route(to, self.id, arrived, &reply_frame) {
            Fate::Delivered { at_ms } if at_ms - now <= timeout.as_millis() as u64 => {
                Ok(decode(&reply_frame)?)
            }
            _ => Err(DeliveryError::Timeout),
        }
    }

    fn next_inbound(&mut self, deadline_ms: u64) -> Result<Option<Inbound>, TransportDown> {
        let mut st = self.net.state.borrow_mut();
        let node = st.nodes.get_mut(&self.id).expect("attached");
        let first = node.inbox.keys().next().copied();
        match first {
            Some(key @ (arrived, _)) if arrived <= deadline_ms => {
                let message = node.inbox.remove(&key).expect("present");
                node.clock_ms = node.clock_ms.max(arrived);
                Ok(Some(Inbound {
                    arrived_ms: arrived,
                    message,
                }))
            }
            _ => {
                node.clock_ms = node.clock_ms.max(deadline_ms);
                Ok(None)
            }
        }
    }

    fn table(&self) -> PeerTable {
        self.net.state.borrow().nodes[&self.id].table.clone()
    }

    fn with_table(&mut self, f: &mut dyn FnMut(&mut PeerTable)) {
        let mut st = self.net.state.borrow_mut();
        f(&mut st.nodes.get_mut(&self.id).expect("attached").table);
    }
}

/// Transcript rows of one message kind.
pub fn count_kind(transcript: &[TranscriptEntry], kind: Kind) -> usize {
    transcript.iter().filter(|e| e.kind == kind as u8).count()
}
