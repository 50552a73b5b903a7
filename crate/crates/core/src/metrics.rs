//! ROC AUC, threshold metrics and the Davies–Bouldin index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels must contain both classes")]
    DegenerateLabels,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least two non-empty clusters")]
    DegenerateClusters,
    #[error("clusters {0} and {1} share a centroid")]
    CoincidentCentroids(usize, usize),
}

/// Area under the ROC curve as the Mann–Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
/// Uses average ranks, so it runs in O(N log N).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks over the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg_rank * pos_in_block as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts with a sample predicted positive iff its score is `>= tau`.
/// Extra entries in the longer slice are ignored.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], tau: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= tau, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Training AUC minus validation AUC; filled in by the caller.
    pub gap: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Threshold metrics from counts; any 0/0 is reported as 0.
    pub fn from_counts(auc: f64, c: &ConfusionCounts) -> Self {
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        let precision = ratio(c.tp, c.tp + c.fp);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        Self {
            auc,
            sensitivity,
            specificity,
            precision,
            recall: sensitivity,
            f1,
            gap: 0.0,
        }
    }
}

pub fn classification_report(
    scores: &[f64],
    labels: &[u8],
    tau: f64,
) -> Result<MetricsReport, MetricsError> {
    let auc = roc_auc(scores, labels)?;
    Ok(MetricsReport::from_counts(
        auc,
        &confusion_at_threshold(scores, labels, tau),
    ))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Davies–Bouldin index of row-major `points` (width `dim`) under the given
/// cluster assignment. Cluster ids need not be contiguous.
pub fn davies_bouldin(points: &[f64], dim: usize, labels: &[usize]) -> Result<f64, MetricsError> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(MetricsError::LengthMismatch {
            scores: points.len() / dim.max(1),
            labels: labels.len(),
        });
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(MetricsError::DegenerateClusters);
    }

    let mut centroids = vec![vec![0.0; dim]; ids.len()];
    let mut counts = vec![0usize; ids.len()];
    let slot = |l: usize| ids.binary_search(&l).expect("label present");
    for (row, &l) in points.chunks_exact(dim).zip(labels) {
        let k = slot(l);
        counts[k] += 1;
        for (c, x) in centroids[k].iter_mut().zip(row) {
            *c += x;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }

    let mut scatter = vec![0.0; ids.len()];
    for (row, &l) in points.chunks_exact(dim).zip(labels) {
        let k = slot(l);
        scatter[k] += euclid(row, &centroids[k]);
    }
    for (s, &n) in scatter.iter_mut().zip(&counts) {
        *s /= n as f64;
    }

    let mut total = 0.0;
    for i in 0..ids.len() {
        let mut worst: f64 = 0.0;
        for j in 0..ids.len() {
            if i == j {
                continue;
            }
            let d = euclid(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(MetricsError::CoincidentCentroids(
                    ids[i].min(ids[j]),
                    ids[i].max(ids[j]),
                ));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / ids.len() as f64)
}
