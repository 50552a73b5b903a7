//! Wire protocol, membership and transports.

pub mod codec;
pub mod exchange;
pub mod membership;
pub mod secure;
pub mod sim;
pub mod tcp;
pub mod transport;

use thiserror::Error;

pub use codec::{decode, encode, CodecError, Kind, Payload, SwarmMessage};
pub use exchange::{broadcast_weights, DeliveryReport, PeerOutcome, UpdateCollector};
pub use membership::{gossip_round, join, PeerTable};
pub use secure::{SecurityConfig, StaticKeypair};
pub use sim::{SimEndpoint, SimNet, SimNetConfig};
pub use tcp::TcpTransport;
pub use transport::{DeliveryError, Inbound, Transport, TransportDown};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("no seed peer reachable")]
    NoPeersReachable,
    #[error("node id {0} is already taken in the swarm")]
    IdCollision(u32),
    #[error(transparent)]
    Delivery(#[from] DeliveryError),
    #[error(transparent)]
    Down(#[from] TransportDown),
}
