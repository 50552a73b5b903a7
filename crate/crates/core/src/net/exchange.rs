//! Pushing local updates to peers and gathering theirs for a round.

use std::collections::BTreeMap;
use std::time::Duration;

use log::{debug, info, warn};

use super::codec::{AckStatus, Kind, Payload, SwarmMessage, WeightsBody};
use super::membership::PeerTable;
use super::transport::{DeliveryError, Transport, TransportDown};
use crate::aggregation::ModelUpdate;
use crate::params::{ParamsError, WeightVector};

pub fn update_to_message(update: &ModelUpdate) -> SwarmMessage {
    SwarmMessage::new(
        update.node_id,
        Payload::Weights(WeightsBody {
            round: update.round,
            epoch: update.epoch,
            sample_count: update.sample_count,
            values: update.weights.values().to_vec(),
        }),
    )
}

/// Rebuilds a peer update. The receiver does not know the sender's tensor
/// layout, so the vector gets a flat shape; [`WeightVector::with_shape`]
/// restores it when the length matches the local model.
pub fn message_to_update(msg: &SwarmMessage) -> Option<Result<ModelUpdate, ParamsError>> {
    let Payload::Weights(body) = &msg.payload else {
        return None;
    };
    Some(
        WeightVector::from_flat(body.values.clone()).map(|weights| ModelUpdate {
            weights,
            sample_count: body.sample_count,
            node_id: msg.sender_id,
            round: body.round,
            epoch: body.epoch,
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum PeerOutcome {
    Acked,
    Failed(DeliveryError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeliveryReport {
    pub outcomes: BTreeMap<u32, PeerOutcome>,
    pub evicted: Vec<u32>,
}

impl DeliveryReport {
    pub fn acked(&self) -> usize {
        self.outcomes
            .values()
            .filter(|o| **o == PeerOutcome::Acked)
            .count()
    }
}

/// Sends one WEIGHTS frame to every peer in `table` and waits for each ACK.
/// Failures are recorded per peer; a peer that times out on three
/// consecutive broadcasts is evicted from the transport's table.
pub fn broadcast_weights<T: Transport + ?Sized>(
    update: &ModelUpdate,
    table: &PeerTable,
    transport: &mut T,
    timeout: Duration,
) -> DeliveryReport {
    let msg = update_to_message(update);
    let mut report = DeliveryReport::default();
    for (id, entry) in table.iter() {
        let outcome = match transport.request(&entry.addr, &msg, timeout) {
            Ok(SwarmMessage {
                payload:
                    Payload::Ack {
                        acked: Kind::Weights,
                        status: AckStatus::Ok,
                        ..
                    },
                ..
            }) => PeerOutcome::Acked,
            Ok(other) => PeerOutcome::Failed(DeliveryError::Protocol(format!(
                "unexpected reply {:?}",
                other.kind()
            ))),
            Err(e) => PeerOutcome::Failed(e),
        };
        let now = transport.now_ms();
        let mut evicted = false;
        transport.with_table(&mut |t| match &outcome {
            PeerOutcome::Acked => t.record_success(id, now),
            PeerOutcome::Failed(_) => evicted = t.record_failure(id),
        });
        if evicted {
            warn!("node {}: evicting unresponsive peer {id}", update.node_id);
            report.evicted.push(id);
        }
        report.outcomes.insert(id, outcome);
    }
    report
}

/// Round-scoped inbox. Updates for future rounds wait here until their
/// round is collected; updates for past rounds are dropped.
#[derive(Debug, Default)]
pub struct UpdateCollector {
    pending: BTreeMap<u32, BTreeMap<u32, ModelUpdate>>,
}

impl UpdateCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buffered(&self) -> usize {
        self.pending.values().map(BTreeMap::len).sum()
    }

    /// Gathers every update for `round` that arrives within `window` of now,
    /// one per sender (the latest wins), ordered by sender id.
    pub fn collect<T: Transport + ?Sized>(
        &mut self,
        round: u32,
        window: Duration,
        transport: &mut T,
    ) -> Result<Vec<ModelUpdate>, TransportDown> {
        let me = transport.node_id();
        let deadline = transport.now_ms() + window.as_millis() as u64;
        self.pending.retain(|&r, _| r >= round);
        let mut current = self.pending.remove(&round).unwrap_or_default();

        while let Some(inbound) = transport.next_inbound(deadline)? {
            let Some(parsed) = message_to_update(&inbound.message) else {
                continue;
            };
            let update = match parsed {
                Ok(u) => u,
                Err(e) => {
                    warn!(
                        "node {me}: rejecting update from {}: {e}",
                        inbound.message.sender_id
                    );
                    continue;
                }
            };
            if update.node_id == me {
                continue;
            }
            if update.round < round {
                debug!(
                    "node {me}: dropping stale round-{} update from {}",
                    update.round, update.node_id
                );
            } else if update.round > round {
                self.pending
                    .entry(update.round)
                    .or_default()
                    .insert(update.node_id, update);
            } else {
                current.insert(update.node_id, update);
            }
        }
        if self.buffered() > 0 {
            info!(
                "node {me}: round {round} collected {} updates, {} buffered for later rounds",
                current.len(),
                self.buffered()
            );
        }
        Ok(current.into_values().collect())
    }
}
