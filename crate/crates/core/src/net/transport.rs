use std::time::Duration;

use thiserror::Error;

use super::codec::{CodecError, SwarmMessage};
use super::membership::PeerTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeliveryError {
    #[error("timed out")]
    Timeout,
    #[error("connection refused")]
    ConnRefused,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("authentication failed: {0}")]
    Auth(String),
}

/// A message taken from a node's inbox, with its arrival time on the
/// transport clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbound {
    pub arrived_ms: u64,
    pub message: SwarmMessage,
}

/// Everything a node needs from the network.
///
/// Inbound traffic is answered by the transport itself through
/// [`respond`](super::membership::respond), which owns the peer table;
/// delivered WEIGHTS frames queue in the inbox.
pub trait Transport {
    fn node_id(&self) -> u32;

    /// Advertised `host:port`.
    fn address(&self) -> &str;

    /// Milliseconds on the transport clock (virtual in the simulator).
    fn now_ms(&self) -> u64;

    /// Sends one frame to `addr` and waits up to `timeout` for the reply.
    fn request(
        &mut self,
        addr: &str,
        msg: &SwarmMessage,
        timeout: Duration,
    ) -> Result<SwarmMessage, DeliveryError>;

    /// Next inbox message that arrives no later than `deadline_ms`. Returns
    /// `Ok(None)` once the deadline has passed, leaving later arrivals queued.
    fn next_inbound(&mut self, deadline_ms: u64) -> Result<Option<Inbound>, TransportDown>;

    fn table(&self) -> PeerTable;

    fn with_table(&mut self, f: &mut dyn FnMut(&mut PeerTable));
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("transport is down: {0}")]
pub struct TransportDown(pub String);
