//! Desk-scale binary classifier and its local training loop.
//!
//! The model is logistic regression, optionally with one rectified hidden
//! layer. Training is mini-batch AdamW under a cosine-annealed learning
//! rate, with early stopping on validation AUC and best-weight restoration.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, NodeShard};
use crate::metrics::{roc_auc, MetricsError};
use crate::params::{ParamsError, ShapeSpec, TensorShape, WeightVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("feature width {actual} does not match model input {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("epoch {t} is past the end of a {total}-epoch schedule")]
    Range { t: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("update produced non-finite parameters")]
    NonFinite,
}

/// Early-stopping improvement threshold on validation AUC.
pub const MIN_AUC_IMPROVEMENT: f64 = 1e-4;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Width of the rectified hidden layer; 0 means plain logistic regression.
    #[serde(default)]
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.input_dim == 0 {
            return Err(TrainError::Config("input_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Logistic: `[w (1×d), b (1×1)]`.
    /// Hidden: `[W1 (h×d), b1 (1×h), w2 (1×h), b2 (1×1)]`.
    pub fn shape(&self) -> ShapeSpec {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let tensors = if h == 0 {
            vec![
                TensorShape { rows: 1, cols: d },
                TensorShape { rows: 1, cols: 1 },
            ]
        } else {
            vec![
                TensorShape { rows: h, cols: d },
                TensorShape { rows: 1, cols: h },
                TensorShape { rows: 1, cols: h },
                TensorShape { rows: 1, cols: 1 },
            ]
        };
        ShapeSpec::new(tensors).expect("input_dim >= 1")
    }

    /// Recovers the model layout from a parameter shape produced by [`ModelSpec::shape`].
    pub fn from_shape(shape: &ShapeSpec) -> Option<Self> {
        let spec = match shape.tensors() {
            [w, b] if w.rows == 1 && b.len() == 1 => Self::logistic(w.cols),
            [w1, b1, w2, b2] if b1.len() == w1.rows && w2.len() == w1.rows && b2.len() == 1 => {
                Self {
                    input_dim: w1.cols,
                    hidden_dim: w1.rows,
                }
            }
            _ => return None,
        };
        (spec.shape() == *shape).then_some(spec)
    }

    fn check(&self, weights: &WeightVector, features: &[f64]) -> Result<usize, TrainError> {
        let shape = self.shape();
        if *weights.shape() != shape {
            return Err(ParamsError::ShapeMismatch {
                expected: shape.total_len(),
                actual: weights.len(),
            }
            .into());
        }
        if !features.len().is_multiple_of(self.input_dim) {
            return Err(TrainError::FeatureWidth {
                expected: self.input_dim,
                actual: features.len(),
            });
        }
        Ok(features.len() / self.input_dim)
    }

    /// Sigmoid output probability for every row of `features`.
    pub fn forward(
        &self,
        weights: &WeightVector,
        features: &[f64],
    ) -> Result<Vec<f64>, TrainError> {
        let mut out = self.logits(weights, features)?;
        out.iter_mut().for_each(|z| *z = sigmoid(*z));
        Ok(out)
    }

    /// Pre-sigmoid scores. Same ranking as [`forward`](Self::forward) but
    /// without the rounding that merges distinct scores near 0 or 1.
    pub fn logits(&self, weights: &WeightVector, features: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.check(weights, features)?;
        let view = ParamView::new(self, weights.values());
        let mut hidden = vec![0.0; self.hidden_dim];
        Ok(features
            .chunks_exact(self.input_dim)
            .map(|x| view.logit(x, &mut hidden))
            .collect())
    }

    /// Penultimate-layer activations, row-major `n × hidden_dim`. For a plain
    /// logistic model these are the raw inputs.
    pub fn embed(
        &self,
        weights: &WeightVector,
        features: &[f64],
    ) -> Result<(Vec<f64>, usize), TrainError> {
        self.check(weights, features)?;
        if self.hidden_dim == 0 {
            return Ok((features.to_vec(), self.input_dim));
        }
        let view = ParamView::new(self, weights.values());
        let mut out = Vec::with_capacity(features.len() / self.input_dim * self.hidden_dim);
        let mut hidden = vec![0.0; self.hidden_dim];
        for x in features.chunks_exact(self.input_dim) {
            view.hidden(x, &mut hidden);
            out.extend_from_slice(&hidden);
        }
        Ok((out, self.hidden_dim))
    }

    /// Mean binary cross-entropy and its gradient over a batch.
    pub fn loss_and_gradient(
        &self,
        weights: &WeightVector,
        features: &[f64],
        labels: &[u8],
    ) -> Result<(f64, WeightVector), TrainError> {
        let n = self.check(weights, features)?;
        if n == 0 {
            return Err(TrainError::EmptyBatch);
        }
        if n != labels.len() {
            return Err(TrainError::FeatureWidth {
                expected: labels.len() * self.input_dim,
                actual: features.len(),
            });
        }
        let view = ParamView::new(self, weights.values());
        let (d, h) = (self.input_dim, self.hidden_dim);
        let mut grad = vec![0.0; weights.len()];
        let mut hidden = vec![0.0; h];
        let mut loss = 0.0;
        let inv_n = 1.0 / n as f64;

        for (x, &y) in features.chunks_exact(d).zip(labels) {
            let p = sigmoid(view.logit(x, &mut hidden));
            let y = f64::from(y);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let dz = (p - y) * inv_n;

            if h == 0 {
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[d] += dz;
                continue;
            }
            let (g_w1, rest) = grad.split_at_mut(h * d);
            let (g_b1, rest) = rest.split_at_mut(h);
            let (g_w2, g_b2) = rest.split_at_mut(h);
            g_b2[0] += dz;
            for j in 0..h {
                g_w2[j] += dz * hidden[j];
                if hidden[j] > 0.0 {
                    let dzj = dz * view.w2[j];
                    g_b1[j] += dzj;
                    for (g, xi) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += dzj * xi;
                    }
                }
            }
        }
        let grad =
            WeightVector::new(grad, weights.shape().clone()).map_err(|_| TrainError::NonFinite)?;
        Ok((loss * inv_n, grad))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct ParamView<'a> {
    d: usize,
    h: usize,
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: f64,
}

impl<'a> ParamView<'a> {
    fn new(spec: &ModelSpec, v: &'a [f64]) -> Self {
        let (d, h) = (spec.input_dim, spec.hidden_dim);
        if h == 0 {
            return Self {
                d,
                h,
                w1: &[],
                b1: &[],
                w2: &v[..d],
                b2: v[d],
            };
        }
        let (w1, rest) = v.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        Self {
            d,
            h,
            w1,
            b1,
            w2,
            b2: rest[0],
        }
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.w1.chunks_exact(self.d))
            .zip(self.b1.iter())
        {
            let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            *o = z.max(0.0);
        }
    }

    fn logit(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        if self.h == 0 {
            return self.b2 + self.w2.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        self.hidden(x, hidden);
        self.b2
            + self
                .w2
                .iter()
                .zip(hidden.iter())
                .map(|(w, a)| w * a)
                .sum::<f64>()
    }
}

/// Uniform(±1/√fan_in) weights per layer, zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> WeightVector {
    let shape = spec.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(shape.total_len());
    let mut uniform = |n: usize, fan_in: usize, out: &mut Vec<f64>| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        out.extend((0..n).map(|_| rng.random_range(-bound..=bound)));
    };
    let (d, h) = (spec.input_dim, spec.hidden_dim);
    if h == 0 {
        uniform(d, d, &mut values);
        values.push(0.0);
    } else {
        uniform(h * d, d, &mut values);
        values.extend(std::iter::repeat_n(0.0, h));
        uniform(h, h, &mut values);
        values.push(0.0);
    }
    WeightVector::new(values, shape).expect("finite init")
}

/// AdamW moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(shape: &ShapeSpec, weight_decay: f64) -> Self {
        Self {
            first_moment: vec![0.0; shape.total_len()],
            second_moment: vec![0.0; shape.total_len()],
            step_count: 0,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn apply(&mut self, weights: &mut [f64], grad: &[f64], lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((w, &g), m), v) in weights
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *w *= decay;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One decoupled-weight-decay Adam update.
pub fn adamw_step(
    weights: WeightVector,
    grad: &WeightVector,
    mut state: OptimizerState,
    lr: f64,
) -> Result<(WeightVector, OptimizerState), TrainError> {
    if weights.shape() != grad.shape() || state.first_moment.len() != weights.len() {
        return Err(ParamsError::ShapeMismatch {
            expected: weights.len(),
            actual: grad.len(),
        }
        .into());
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainError::Config(format!(
            "learning rate {lr} must be positive"
        )));
    }
    let shape = weights.shape().clone();
    let mut values = weights.into_values();
    state.apply(&mut values, grad.values(), lr);
    let weights = WeightVector::new(values, shape).map_err(|_| TrainError::NonFinite)?;
    Ok((weights, state))
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·t/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64, TrainError> {
    if total == 0 || t > total {
        return Err(TrainError::Range { t, total });
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_min: f64,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr_initial: 1e-4,
            lr_min: 0.0,
            patience: 5,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.patience >= 1
            && self.lr_min >= 0.0
            && self.lr_initial > self.lr_min
            && self.lr_initial.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Global epoch index, starting at 0.
    pub epoch: usize,
    pub train_auc: f64,
    pub val_auc: f64,
    pub train_loss: f64,
    pub lr_used: f64,
}

pub type EpochHistory = Vec<EpochRecord>;

/// Shared flag polled between epochs.
#[derive(Debug, Default)]
pub struct StopFlag(AtomicBool);

impl StopFlag {
    pub fn raise(&self) -> bool {
        !self.0.swap(true, Ordering::SeqCst)
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// AUC of `weights` on `ds`, ranked by logit.
pub fn evaluate_auc(
    spec: &ModelSpec,
    weights: &WeightVector,
    ds: &Dataset,
) -> Result<f64, TrainError> {
    let scores = spec.logits(weights, ds.features())?;
    Ok(roc_auc(&scores, ds.labels())?)
}

/// Validation AUC, or training AUC when the shard has no usable validation set.
pub fn selection_auc(
    spec: &ModelSpec,
    weights: &WeightVector,
    shard: &NodeShard,
) -> Result<f64, TrainError> {
    if shard.validation.has_both_classes() {
        evaluate_auc(spec, weights, &shard.validation)
    } else {
        evaluate_auc(spec, weights, &shard.train)
    }
}

/// Complete resumable trainer state, captured for checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerSnapshot {
    pub weights: WeightVector,
    pub optimizer: OptimizerState,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub epoch: usize,
    pub best: Option<(f64, WeightVector)>,
    pub patience_anchor: f64,
    pub since_improvement: usize,
    pub stopped_early: bool,
    pub history: EpochHistory,
}

/// Training state that survives across rounds: current weights, optimizer
/// moments, shuffling RNG, the global epoch counter, and best-so-far tracking.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    spec: ModelSpec,
    cfg: TrainConfig,
    weights: WeightVector,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
    best: Option<(f64, WeightVector)>,
    // AUC level an epoch has to beat by MIN_AUC_IMPROVEMENT to reset patience.
    patience_anchor: f64,
    since_improvement: usize,
    stopped_early: bool,
    history: EpochHistory,
}

impl LocalTrainer {
    pub fn new(
        spec: ModelSpec,
        cfg: TrainConfig,
        weights: WeightVector,
    ) -> Result<Self, TrainError> {
        spec.validate()?;
        cfg.validate()?;
        if *weights.shape() != spec.shape() {
            return Err(ParamsError::ShapeMismatch {
                expected: spec.shape().total_len(),
                actual: weights.len(),
            }
            .into());
        }
        Ok(Self {
            optimizer: OptimizerState::new(weights.shape(), cfg.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            spec,
            cfg,
            weights,
            epoch: 0,
            best: None,
            patience_anchor: f64::NEG_INFINITY,
            since_improvement: 0,
            stopped_early: false,
            history: Vec::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn epochs_remaining(&self) -> usize {
        self.cfg.epochs - self.epoch
    }

    pub fn stopped_early(&self) -> bool {
        self.stopped_early
    }

    pub fn history(&self) -> &EpochHistory {
        &self.history
    }

    pub fn best_auc(&self) -> Option<f64> {
        self.best.as_ref().map(|(auc, _)| *auc)
    }

    /// Best-validation weights seen so far, or the current weights before
    /// any evaluation happened.
    pub fn best_weights(&self) -> &WeightVector {
        self.best.as_ref().map_or(&self.weights, |(_, w)| w)
    }

    pub fn is_finished(&self) -> bool {
        self.stopped_early || self.epoch >= self.cfg.epochs
    }

    fn observe(&mut self, auc: f64, counts_as_epoch: bool) {
        if self.best.as_ref().is_none_or(|(best, _)| auc > *best) {
            self.best = Some((auc, self.weights.clone()));
        }
        if auc > self.patience_anchor + MIN_AUC_IMPROVEMENT {
            self.patience_anchor = auc;
            self.since_improvement = 0;
        } else if counts_as_epoch {
            self.since_improvement += 1;
            if self.since_improvement >= self.cfg.patience {
                self.stopped_early = true;
            }
        }
    }

    /// Replaces the current weights (after an accepted merge) and lets the
    /// new weights compete for best-so-far without consuming patience.
    pub fn adopt(&mut self, weights: WeightVector, selection_auc: f64) -> Result<(), TrainError> {
        if *weights.shape() != self.spec.shape() {
            return Err(ParamsError::ShapeMismatch {
                expected: self.spec.shape().total_len(),
                actual: weights.len(),
            }
            .into());
        }
        self.weights = weights;
        self.observe(selection_auc, false);
        Ok(())
    }

    fn run_one_epoch(&mut self, shard: &NodeShard) -> Result<EpochRecord, TrainError> {
        let train = &shard.train;
        let lr = cosine_lr(
            self.epoch,
            self.cfg.epochs,
            self.cfg.lr_initial,
            self.cfg.lr_min,
        )?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);

        let d = self.spec.input_dim;
        let mut feats = Vec::with_capacity(self.cfg.batch_size * d);
        let mut labels = Vec::with_capacity(self.cfg.batch_size);
        let mut loss_sum = 0.0;
        let shape = self.weights.shape().clone();
        for batch in order.chunks(self.cfg.batch_size) {
            feats.clear();
            labels.clear();
            for &i in batch {
                feats.extend_from_slice(train.row(i));
                labels.push(train.labels()[i]);
            }
            let (loss, grad) = self
                .spec
                .loss_and_gradient(&self.weights, &feats, &labels)?;
            loss_sum += loss * batch.len() as f64;
            let mut values =
                std::mem::replace(&mut self.weights, WeightVector::zeros(shape.clone()))
                    .into_values();
            self.optimizer.apply(&mut values, grad.values(), lr);
            self.weights =
                WeightVector::new(values, shape.clone()).map_err(|_| TrainError::NonFinite)?;
        }

        let train_auc = evaluate_auc(&self.spec, &self.weights, train)?;
        let val_auc = if shard.validation.has_both_classes() {
            evaluate_auc(&self.spec, &self.weights, &shard.validation)?
        } else {
            train_auc
        };
        let record = EpochRecord {
            epoch: self.epoch,
            train_auc,
            val_auc,
            train_loss: loss_sum / train.len() as f64,
            lr_used: lr,
        };
        self.epoch += 1;
        self.history.push(record);
        self.observe(val_auc, true);
        Ok(record)
    }

    /// Runs up to `budget` epochs, stopping early on patience exhaustion,
    /// schedule end, or a raised `stop` flag (checked before each epoch after
    /// the first). Returns the records produced by this call.
    pub fn run_epochs(
        &mut self,
        shard: &NodeShard,
        budget: usize,
        stop: Option<&StopFlag>,
    ) -> Result<Vec<EpochRecord>, TrainError> {
        if shard.train.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut out = Vec::new();
        for i in 0..budget {
            if self.is_finished() || (i > 0 && stop.is_some_and(StopFlag::is_raised)) {
                break;
            }
            out.push(self.run_one_epoch(shard)?);
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            weights: self.weights.clone(),
            optimizer: self.optimizer.clone(),
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            epoch: self.epoch,
            best: self.best.clone(),
            patience_anchor: self.patience_anchor,
            since_improvement: self.since_improvement,
            stopped_early: self.stopped_early,
            history: self.history.clone(),
        }
    }

    pub fn restore(
        spec: ModelSpec,
        cfg: TrainConfig,
        snap: TrainerSnapshot,
    ) -> Result<Self, TrainError> {
        let mut trainer = Self::new(spec, cfg, snap.weights)?;
        if snap.optimizer.first_moment.len() != trainer.weights.len()
            || snap.optimizer.second_moment.len() != trainer.weights.len()
        {
            return Err(TrainError::Config(
                "optimizer state does not match model".into(),
            ));
        }
        let mut rng = ChaCha8Rng::from_seed(snap.rng_seed);
        rng.set_stream(snap.rng_stream);
        rng.set_word_pos(snap.rng_word_pos);
        trainer.optimizer = snap.optimizer;
        trainer.rng = rng;
        trainer.epoch = snap.epoch;
        trainer.best = snap.best;
        trainer.patience_anchor = snap.patience_anchor;
        trainer.since_improvement = snap.since_improvement;
        trainer.stopped_early = snap.stopped_early;
        trainer.history = snap.history;
        Ok(trainer)
    }
}

/// Trains a fresh trainer for up to `epoch_budget` epochs and returns the
/// best-validation weights, the history and whether early stopping fired.
pub fn train_epochs(
    shard: &NodeShard,
    weights: WeightVector,
    cfg: &TrainConfig,
    epoch_budget: usize,
) -> Result<(WeightVector, EpochHistory, bool), TrainError> {
    if epoch_budget == 0 {
        return Err(TrainError::Config("epoch budget must be at least 1".into()));
    }
    let spec = ModelSpec::from_shape(weights.shape()).ok_or(TrainError::Params(
        ParamsError::ShapeMismatch {
            expected: 0,
            actual: weights.len(),
        },
    ))?;
    if spec.input_dim != shard.train.dim() {
        return Err(TrainError::FeatureWidth {
            expected: spec.input_dim,
            actual: shard.train.dim(),
        });
    }
    let mut trainer = LocalTrainer::new(spec, *cfg, weights)?;
    trainer.run_epochs(shard, epoch_budget, None)?;
    Ok((
        trainer.best_weights().clone(),
        trainer.history,
        trainer.stopped_early,
    ))
}
