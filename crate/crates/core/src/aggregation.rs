//! Merge policies and the validation gate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::NodeShard;
use crate::params::{linear_combine, ParamsError, WeightVector};
use crate::trainer::{selection_auc, ModelSpec, TrainError};

/// A node's weights plus the provenance peers need to weight and order it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub weights: WeightVector,
    /// Number of local training samples behind these weights.
    pub sample_count: u64,
    pub node_id: u32,
    pub round: u32,
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Accept iff candidate ≥ θ · incumbent.
    Relative,
    /// Accept iff candidate ≥ θ.
    Absolute,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub mode: GateMode,
    pub theta: f64,
}

impl Default for GatePolicy {
    fn default() -> Self {
        Self {
            mode: GateMode::Relative,
            theta: 0.8,
        }
    }
}

impl GatePolicy {
    pub fn off() -> Self {
        Self {
            mode: GateMode::Off,
            theta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.theta > 0.0 && self.theta <= 1.0 {
            Ok(())
        } else {
            Err(format!("gate theta {} outside (0, 1]", self.theta))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeScheme {
    Fedavg,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Accept,
    Reject,
}

pub fn gate_decision(
    candidate_val_auc: f64,
    incumbent_val_auc: f64,
    policy: &GatePolicy,
) -> GateDecision {
    let accept = match policy.mode {
        GateMode::Relative => candidate_val_auc >= policy.theta * incumbent_val_auc,
        GateMode::Absolute => candidate_val_auc >= policy.theta,
        GateMode::Off => true,
    };
    if accept {
        GateDecision::Accept
    } else {
        GateDecision::Reject
    }
}

/// Sample-count weighted average `Σ n_k·w_k / Σ n_k`.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<WeightVector, ParamsError> {
    let vectors: Vec<&WeightVector> = updates.iter().map(|u| &u.weights).collect();
    let coeffs: Vec<f64> = updates.iter().map(|u| u.sample_count as f64).collect();
    linear_combine(&vectors, &coeffs)
}

pub fn uniform_average(updates: &[ModelUpdate]) -> Result<WeightVector, ParamsError> {
    let vectors: Vec<&WeightVector> = updates.iter().map(|u| &u.weights).collect();
    linear_combine(&vectors, &vec![1.0; vectors.len()])
}

pub fn combine(scheme: MergeScheme, updates: &[ModelUpdate]) -> Result<WeightVector, ParamsError> {
    match scheme {
        MergeScheme::Fedavg => fedavg(updates),
        MergeScheme::Uniform => uniform_average(updates),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub weights: WeightVector,
    pub accepted: bool,
    /// Peers that actually entered the average.
    pub peers_merged: usize,
    pub discarded: Vec<u32>,
    pub local_val_auc: f64,
    pub candidate_val_auc: f64,
}

/// Averages the local update with every compatible peer update, scores the
/// candidate and the local weights on the node's validation data, and keeps
/// whichever the gate selects.
///
/// Peers with a different parameter shape or a stale round are dropped from
/// the average and listed in `discarded`.
pub fn merge_round(
    spec: &ModelSpec,
    local: &ModelUpdate,
    peers: &[ModelUpdate],
    shard: &NodeShard,
    policy: &GatePolicy,
    scheme: MergeScheme,
) -> Result<MergeOutcome, TrainError> {
    let mut members = vec![local.clone()];
    let mut discarded = Vec::new();
    for p in peers {
        if p.weights.shape() != local.weights.shape() {
            warn!(
                "node {} discards update from {}: {} parameters, expected {}",
                local.node_id,
                p.node_id,
                p.weights.len(),
                local.weights.len()
            );
            discarded.push(p.node_id);
        } else if p.round < local.round {
            warn!(
                "node {} discards stale round-{} update from {}",
                local.node_id, p.round, p.node_id
            );
            discarded.push(p.node_id);
        } else {
            members.push(p.clone());
        }
    }

    let local_val_auc = selection_auc(spec, &local.weights, shard)?;
    if members.len() == 1 {
        return Ok(MergeOutcome {
            weights: local.weights.clone(),
            accepted: true,
            peers_merged: 0,
            discarded,
            local_val_auc,
            candidate_val_auc: local_val_auc,
        });
    }

    let candidate = combine(scheme, &members)?;
    let candidate_val_auc = selection_auc(spec, &candidate, shard)?;
    let accepted = gate_decision(candidate_val_auc, local_val_auc, policy) == GateDecision::Accept;
    Ok(MergeOutcome {
        weights: if accepted {
            candidate
        } else {
            local.weights.clone()
        },
        accepted,
        peers_merged: members.len() - 1,
        discarded,
        local_val_auc,
        candidate_val_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, synth_dataset, PartitionPlan};
    use crate::trainer::init_model;

    fn upd(values: &[f64], n: u64) -> ModelUpdate {
        ModelUpdate {
            weights: WeightVector::from_flat(values.to_vec()).unwrap(),
            sample_count: n,
            node_id: 0,
            round: 0,
            epoch: 0,
        }
    }

    #[test]
    fn fedavg_cases() {
        let one = upd(&[1.5, -2.0], 10);
        assert!(fedavg(std::slice::from_ref(&one))
            .unwrap()
            .bitwise_eq(&one.weights));
        assert_eq!(
            fedavg(&[upd(&[0.0], 1), upd(&[4.0], 3)]).unwrap().values(),
            &[3.0]
        );
        let eq = [
            upd(&[0.1, 0.7], 5),
            upd(&[0.3, -0.2], 5),
            upd(&[1.9, 0.0], 5),
        ];
        let a = fedavg(&eq).unwrap();
        let b = uniform_average(&eq).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(fedavg(&[]), Err(ParamsError::EmptyInput));
    }

    #[test]
    fn uniform_cases() {
        assert_eq!(
            uniform_average(&[upd(&[1.0], 9), upd(&[3.0], 1)])
                .unwrap()
                .values(),
            &[2.0]
        );
    }

    #[test]
    fn gate_rules() {
        let rel = GatePolicy::default();
        assert_eq!(gate_decision(0.65, 0.80, &rel), GateDecision::Accept);
        assert_eq!(gate_decision(0.63, 0.80, &rel), GateDecision::Reject);
        let abs = GatePolicy {
            mode: GateMode::Absolute,
            theta: 0.8,
        };
        assert_eq!(gate_decision(0.79, 0.1, &abs), GateDecision::Reject);
        assert_eq!(gate_decision(0.8, 0.99, &abs), GateDecision::Accept);
        assert_eq!(
            gate_decision(0.0, 1.0, &GatePolicy::off()),
            GateDecision::Accept
        );
        assert!(GatePolicy {
            mode: GateMode::Relative,
            theta: 0.0
        }
        .validate()
        .is_err());
    }

    fn node_shard() -> NodeShard {
        let ds = synth_dataset(400, 3, 2.0, 0.5, 1).unwrap();
        let mut plan = PartitionPlan::new(vec![1.0], 1);
        plan.val_frac = 0.25;
        partition(&ds, &plan).unwrap().remove(0)
    }

    #[test]
    fn self_merge_is_identity() {
        let spec = ModelSpec::logistic(3);
        let shard = node_shard();
        let local = ModelUpdate {
            weights: init_model(&spec, 4),
            sample_count: 300,
            node_id: 1,
            round: 2,
            epoch: 6,
        };
        let out = merge_round(
            &spec,
            &local,
            &[],
            &shard,
            &GatePolicy::default(),
            MergeScheme::Fedavg,
        )
        .unwrap();
        assert!(out.accepted);
        assert!(out.weights.bitwise_eq(&local.weights));
        assert_eq!(out.candidate_val_auc, out.local_val_auc);
    }

    #[test]
    fn mismatched_and_stale_peers_are_discarded() {
        let spec = ModelSpec::logistic(3);
        let shard = node_shard();
        let local = ModelUpdate {
            weights: init_model(&spec, 4),
            sample_count: 300,
            node_id: 0,
            round: 2,
            epoch: 6,
        };
        let good = ModelUpdate {
            weights: init_model(&spec, 5),
            node_id: 1,
            ..local.clone()
        };
        let wrong_shape = ModelUpdate {
            weights: init_model(&ModelSpec::logistic(5), 5),
            node_id: 2,
            ..local.clone()
        };
        let stale = ModelUpdate {
            round: 1,
            node_id: 3,
            ..good.clone()
        };
        let out = merge_round(
            &spec,
            &local,
            &[good.clone(), wrong_shape, stale],
            &shard,
            &GatePolicy::off(),
            MergeScheme::Fedavg,
        )
        .unwrap();
        assert_eq!(out.peers_merged, 1);
        assert_eq!(out.discarded, vec![2, 3]);
        let expected = fedavg(&[local, good]).unwrap();
        assert!(out.weights.bitwise_eq(&expected));
    }
}
