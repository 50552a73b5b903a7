//! Synthetic datasets, stratified splitting and per-node partitioning.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid fraction: {0}")]
    InvalidFraction(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("label at line {line} is {value:?}, expected 0 or 1")]
    Label { line: u64, value: String },
    #[error("features have {features} rows but there are {labels} labels")]
    RowCount { features: usize, labels: usize },
    #[error("feature matrix must have at least one column and finite values")]
    BadFeatures,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Round half up, the rule used for every per-node and per-split count.
pub(crate) fn round_count(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u8>,
        dim: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if dim == 0
            || features.iter().any(|v| !v.is_finite())
            || !features.len().is_multiple_of(dim)
        {
            return Err(DataError::BadFeatures);
        }
        if features.len() / dim != labels.len() {
            return Err(DataError::RowCount {
                features: features.len() / dim,
                labels: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(DataError::Label {
                line: 0,
                value: bad.to_string(),
            });
        }
        Ok(Self {
            features,
            labels,
            dim,
            seed,
        })
    }

    pub fn empty(dim: usize, seed: u64) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            dim,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            dim: self.dim,
            seed: self.seed,
        }
    }

    /// Row-wise concatenation. All parts must share a dimension.
    pub fn concat(parts: &[&Dataset]) -> Result<Self, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::InsufficientData("nothing to concatenate".into()))?;
        let mut out = Self::empty(first.dim, first.seed);
        for p in parts {
            if p.dim != first.dim {
                return Err(DataError::BadFeatures);
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    /// SHA-256 over dimension, labels and the little-endian bits of every
    /// feature; identifies a test set inside result files.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_le_bytes());
        }
        h.update(&self.labels);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }
}

/// Two-class Gaussian mixture: positives centred at `+sep/2` on every axis,
/// negatives at `-sep/2`, unit variance. Exactly `round(n·positive_frac)`
/// rows are positive.
pub fn synth_dataset(
    n: usize,
    d: usize,
    class_sep: f64,
    positive_frac: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(positive_frac > 0.0 && positive_frac < 1.0) {
        return Err(DataError::InvalidFraction(format!(
            "positive fraction {positive_frac} outside (0, 1)"
        )));
    }
    if n < 2 || d == 0 {
        return Err(DataError::InsufficientData(format!(
            "need n >= 2 and d >= 1, got n={n} d={d}"
        )));
    }
    if !class_sep.is_finite() {
        return Err(DataError::BadFeatures);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = round_count(n as f64 * positive_frac).min(n);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let half = class_sep / 2.0;
    let mut features = Vec::with_capacity(n * d);
    for &label in &labels {
        let mean = if label == 1 { half } else { -half };
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mean + z);
        }
    }
    Dataset::new(features, labels, d, seed)
}

/// Stratified three-way split into (train, validation, test). The test set
/// receives everything not assigned to train or validation.
pub fn split(
    ds: &Dataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(DataError::InvalidFraction(format!(
            "train {train_frac} + validation {val_frac} must lie in (0, 1) with train > 0"
        )));
    }
    let n = ds.len();
    let n_train = round_count(n as f64 * train_frac);
    let n_val = round_count(n as f64 * val_frac).min(n - n_train.min(n));
    if n_train == 0 || n_train + n_val >= n {
        return Err(DataError::InsufficientData(format!(
            "{n} rows cannot fill train {n_train} and validation {n_val} with a nonempty test set"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [mut neg, mut pos] = ds.class_indices();
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);

    let p = pos.len() as f64;
    let pos_train = round_count(p * n_train as f64 / n as f64)
        .min(n_train)
        .min(pos.len());
    let pos_val = round_count(p * n_val as f64 / n as f64)
        .min(n_val)
        .min(pos.len() - pos_train);
    let neg_train = n_train - pos_train;
    let neg_val = n_val - pos_val;
    if neg_train + neg_val > neg.len() {
        return Err(DataError::InsufficientData(
            "too few negatives for the requested split".into(),
        ));
    }

    let take = |pos_range: std::ops::Range<usize>, neg_range: std::ops::Range<usize>| {
        let mut idx: Vec<usize> = pos[pos_range]
            .iter()
            .chain(&neg[neg_range])
            .copied()
            .collect();
        idx.sort_unstable();
        ds.subset(&idx)
    };
    let train = take(0..pos_train, 0..neg_train);
    let val = take(
        pos_train..pos_train + pos_val,
        neg_train..neg_train + neg_val,
    );
    let test = take(
        pos_train + pos_val..pos.len(),
        neg_train + neg_val..neg.len(),
    );
    Ok((train, val, test))
}

/// Per-node allocation of a pooled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub fractions: Vec<f64>,
    /// Target positive proportion per node. `None` keeps the pool's rate.
    pub class_bias: Option<Vec<f64>>,
    /// Share of each node's allocation held out as its local validation set.
    pub val_frac: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Self {
        Self {
            fractions,
            class_bias: None,
            val_frac: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.fractions.is_empty() {
            return Err(DataError::InvalidFraction("no nodes in plan".into()));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(DataError::InvalidFraction(format!(
                "node fraction {f} outside (0, 1]"
            )));
        }
        let total: f64 = self.fractions.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(DataError::InvalidFraction(format!(
                "fractions sum to {total} > 1"
            )));
        }
        if let Some(bias) = &self.class_bias {
            if bias.len() != self.fractions.len() {
                return Err(DataError::InvalidFraction(
                    "class_bias length differs from fractions".into(),
                ));
            }
            if let Some(b) = bias.iter().find(|&&b| !(0.0..=1.0).contains(&b)) {
                return Err(DataError::InvalidFraction(format!(
                    "class bias {b} outside [0, 1]"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(DataError::InvalidFraction(format!(
                "validation fraction {} outside [0, 1)",
                self.val_frac
            )));
        }
        Ok(())
    }
}

/// One node's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeShard {
    pub node_id: u32,
    pub train: Dataset,
    pub validation: Dataset,
}

impl NodeShard {
    pub fn sample_count(&self) -> usize {
        self.train.len()
    }
}

/// Splits `ds` into disjoint per-node shards. Node `k` receives
/// `round(fractions[k]·N)` rows; leftovers are discarded, never duplicated.
pub fn partition(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<NodeShard>, DataError> {
    plan.validate()?;
    let n = ds.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let [mut neg_pool, mut pos_pool] = ds.class_indices();
    neg_pool.shuffle(&mut rng);
    pos_pool.shuffle(&mut rng);
    let pool_rate = pos_pool.len() as f64 / n;

    let (mut pos_used, mut neg_used) = (0usize, 0usize);
    let mut shards = Vec::with_capacity(plan.fractions.len());
    for (k, &frac) in plan.fractions.iter().enumerate() {
        let count = round_count(frac * n);
        if count < 2 {
            return Err(DataError::InsufficientData(format!(
                "node {k} would receive {count} samples"
            )));
        }
        let rate = plan.class_bias.as_ref().map_or(pool_rate, |b| b[k]);
        let n_pos = round_count(rate * count as f64).min(count);
        let n_neg = count - n_pos;
        if pos_used + n_pos > pos_pool.len() || neg_used + n_neg > neg_pool.len() {
            return Err(DataError::InsufficientData(format!(
                "class pools exhausted at node {k} ({n_pos} positives, {n_neg} negatives requested)"
            )));
        }
        let pos = &pos_pool[pos_used..pos_used + n_pos];
        let neg = &neg_pool[neg_used..neg_used + n_neg];
        pos_used += n_pos;
        neg_used += n_neg;

        let val_pos = round_count(n_pos as f64 * plan.val_frac);
        let val_neg = round_count(n_neg as f64 * plan.val_frac);
        let mut train_idx: Vec<usize> = pos[val_pos..]
            .iter()
            .chain(&neg[val_neg..])
            .copied()
            .collect();
        let mut val_idx: Vec<usize> = pos[..val_pos]
            .iter()
            .chain(&neg[..val_neg])
            .copied()
            .collect();
        train_idx.sort_unstable();
        val_idx.sort_unstable();
        if train_idx.len() < 2 {
            return Err(DataError::InsufficientData(format!(
                "node {k} keeps {} training samples",
                train_idx.len()
            )));
        }
        shards.push(NodeShard {
            node_id: k as u32,
            train: ds.subset(&train_idx),
            validation: ds.subset(&val_idx),
        });
    }
    Ok(shards)
}

fn parse_row(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record
        .iter()
        .map(|f| f.trim().parse::<f64>().ok())
        .collect()
}

/// Reads a dataset whose last column is the 0/1 label. A first row that
/// does not parse as numbers is treated as a header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let Some(values) = parse_row(&record) else {
            if i == 0 {
                continue;
            }
            return Err(DataError::Parse {
                line,
                message: "non-numeric field".into(),
            });
        };
        if values.len() < 2 {
            return Err(DataError::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        let width = values.len() - 1;
        if *dim.get_or_insert(width) != width {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} features, found {width}", dim.unwrap_or(0)),
            });
        }
        let label = values[width];
        let label = if label == 0.0 {
            0
        } else if label == 1.0 {
            1
        } else {
            return Err(DataError::Label {
                line,
                value: record[width].trim().to_string(),
            });
        };
        if let Some(index) = values[..width].iter().position(|v| !v.is_finite()) {
            return Err(DataError::Parse {
                line,
                message: format!("non-finite feature in column {}", index + 1),
            });
        }
        features.extend_from_slice(&values[..width]);
        labels.push(label);
    }
    let dim = dim.ok_or(DataError::Parse {
        line: 1,
        message: "no data rows".into(),
    })?;
    Dataset::new(features, labels, dim, 0)
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes features with 17 significant digits so a reload is bit-exact.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for i in 0..ds.len() {
        for v in ds.row(i) {
            write!(out, "{v:.16e},")?;
        }
        writeln!(out, "{}", ds.labels[i])?;
    }
    out.flush()?;
    Ok(())
}
