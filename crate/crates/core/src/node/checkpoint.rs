//! Binary checkpoint written after every round.
//!
//! Layout (all integers little-endian, reals as IEEE-754 bit patterns):
//!
//! ```text
//! "SWCK" | version u8 | node_id u32 | round u32
//! shape:      n u32, then n × (rows u32, cols u32)
//! weights:    f64 × shape total
//! optimizer:  m f64×len | v f64×len | step u64 | wd, beta1, beta2, eps f64
//! rng:        seed [u8;32] | stream u64 | word_pos u128
//! epoch u64 | best flag u8 [auc f64, weights f64×len]
//! patience_anchor f64 | since_improvement u64 | stopped_early u8
//! history:    n u64, then n × (epoch u64, train_auc, val_auc, train_loss, lr f64)
//! reports:    n u64, then n × RoundReport fields in declaration order
//! ```

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::RoundReport;
use crate::params::{ParamsError, ShapeSpec, TensorShape, WeightVector};
use crate::trainer::{EpochRecord, OptimizerState, TrainerSnapshot};

const MAGIC: &[u8; 4] = b"SWCK";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub node_id: u32,
    /// Next round to run.
    pub round: u32,
    pub trainer: TrainerSnapshot,
    pub reports: Vec<RoundReport>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        if self.0.len() < N {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take::<1>()?[0])
    }
    fn flag(&mut self) -> Result<bool, CheckpointError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CheckpointError::Corrupt(format!("flag byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?)
            .map_err(|_| CheckpointError::Corrupt("count overflows usize".into()))
    }
    /// A count whose items need at least `item_bytes` each; rejects counts
    /// the remaining input cannot hold.
    fn count(&mut self, item_bytes: usize) -> Result<usize, CheckpointError> {
        let n = self.usize()?;
        if n.saturating_mul(item_bytes) > self.0.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        if n.saturating_mul(8) > self.0.len() {
            return Err(CheckpointError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u8(VERSION);
    w.u32(ck.node_id);
    w.u32(ck.round);

    let snap = &ck.trainer;
    let shape = snap.weights.shape();
    w.u32(shape.tensors().len() as u32);
    for t in shape.tensors() {
        w.u32(t.rows as u32);
        w.u32(t.cols as u32);
    }
    w.f64s(snap.weights.values());

    let opt = &snap.optimizer;
    w.f64s(&opt.first_moment);
    w.f64s(&opt.second_moment);
    w.u64(opt.step_count);
    w.f64s(&[opt.weight_decay, opt.beta1, opt.beta2, opt.epsilon]);

    w.0.extend_from_slice(&snap.rng_seed);
    w.u64(snap.rng_stream);
    w.0.extend_from_slice(&snap.rng_word_pos.to_le_bytes());

    w.usize(snap.epoch);
    match &snap.best {
        Some((auc, best)) => {
            w.u8(1);
            w.f64(*auc);
            w.f64s(best.values());
        }
        None => w.u8(0),
    }
    w.f64(snap.patience_anchor);
    w.usize(snap.since_improvement);
    w.u8(snap.stopped_early as u8);

    w.usize(snap.history.len());
    for r in &snap.history {
        w.usize(r.epoch);
        w.f64s(&[r.train_auc, r.val_auc, r.train_loss, r.lr_used]);
    }

    w.usize(ck.reports.len());
    for r in &ck.reports {
        w.u32(r.node);
        w.u32(r.round);
        w.usize(r.epochs_run);
        w.usize(r.epoch_end);
        w.f64s(&[
            r.train_auc,
            r.local_val_auc,
            r.candidate_val_auc,
            r.adopted_val_auc,
        ]);
        w.u8(r.gate_accepted as u8);
        w.usize(r.peers_heard);
        w.usize(r.peers_merged);
        w.f64(r.weights_l2_delta);
    }
    w.0
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader(bytes);
    if &r.take::<4>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let node_id = r.u32()?;
    let round = r.u32()?;

    let n_tensors = r.u32()? as usize;
    if n_tensors.saturating_mul(8) > r.0.len() {
        return Err(CheckpointError::Truncated);
    }
    let tensors = (0..n_tensors)
        .map(|_| {
            Ok(TensorShape {
                rows: r.u32()? as usize,
                cols: r.u32()? as usize,
            })
        })
        .collect::<Result<Vec<_>, CheckpointError>>()?;
    let shape = ShapeSpec::new(tensors)?;
    let len = shape.total_len();
    let weights = WeightVector::new(r.f64s(len)?, shape.clone())?;

    let first_moment = r.f64s(len)?;
    let second_moment = r.f64s(len)?;
    let step_count = r.u64()?;
    let optimizer = OptimizerState {
        first_moment,
        second_moment,
        step_count,
        weight_decay: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    };

    let rng_seed = r.take::<32>()?;
    let rng_stream = r.u64()?;
    let rng_word_pos = u128::from_le_bytes(r.take()?);

    let epoch = r.usize()?;
    let best = if r.flag()? {
        let auc = r.f64()?;
        Some((auc, WeightVector::new(r.f64s(len)?, shape)?))
    } else {
        None
    };
    let patience_anchor = r.f64()?;
    let since_improvement = r.usize()?;
    let stopped_early = r.flag()?;

    let n = r.count(40)?;
    let history = (0..n)
        .map(|_| {
            Ok(EpochRecord {
                epoch: r.usize()?,
                train_auc: r.f64()?,
                val_auc: r.f64()?,
                train_loss: r.f64()?,
                lr_used: r.f64()?,
            })
        })
        .collect::<Result<Vec<_>, CheckpointError>>()?;

    let n = r.count(81)?;
    let reports = (0..n)
        .map(|_| {
            Ok(RoundReport {
                node: r.u32()?,
                round: r.u32()?,
                epochs_run: r.usize()?,
                epoch_end: r.usize()?,
                train_auc: r.f64()?,
                local_val_auc: r.f64()?,
                candidate_val_auc: r.f64()?,
                adopted_val_auc: r.f64()?,
                gate_accepted: r.flag()?,
                peers_heard: r.usize()?,
                peers_merged: r.usize()?,
                weights_l2_delta: r.f64()?,
            })
        })
        .collect::<Result<Vec<_>, CheckpointError>>()?;

    if !r.0.is_empty() {
        return Err(CheckpointError::Trailing(r.0.len()));
    }
    Ok(Checkpoint {
        node_id,
        round,
        trainer: TrainerSnapshot {
            weights,
            optimizer,
            rng_seed,
            rng_stream,
            rng_word_pos,
            epoch,
            best,
            patience_anchor,
            since_improvement,
            stopped_early,
            history,
        },
        reports,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        decode(bytes)
    }
}

/// Writes atomically: a temp file beside `path`, then a rename.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode(ck))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, synth_dataset, PartitionPlan};
    use crate::trainer::{init_model, LocalTrainer, ModelSpec, TrainConfig};

    fn sample() -> Checkpoint {
        let ds = synth_dataset(200, 3, 1.0, 0.5, 1).unwrap();
        let mut plan = PartitionPlan::new(vec![1.0], 1);
        plan.val_frac = 0.25;
        let shard = partition(&ds, &plan).unwrap().remove(0);
        let spec = ModelSpec {
            input_dim: 3,
            hidden_dim: 4,
        };
        let mut t = LocalTrainer::new(spec, TrainConfig::default(), init_model(&spec, 5)).unwrap();
        t.run_epochs(&shard, 2, None).unwrap();
        Checkpoint {
            node_id: 7,
            round: 1,
            trainer: t.snapshot(),
            reports: vec![RoundReport {
                node: 7,
                round: 0,
                epochs_run: 2,
                epoch_end: 2,
                train_auc: 0.7,
                local_val_auc: 0.6,
                candidate_val_auc: f64::NAN,
                adopted_val_auc: 0.6,
                gate_accepted: false,
                peers_heard: 3,
                peers_merged: 0,
                weights_l2_delta: 0.0,
            }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.trainer, ck.trainer);
        assert!(back.reports[0].candidate_val_auc.is_nan());
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(
                Checkpoint::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(CheckpointError::Trailing(1))
        ));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));
    }
}
