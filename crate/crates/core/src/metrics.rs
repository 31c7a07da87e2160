//! Accuracy and contrastive-geometry diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{EmbeddingBatch, Side};
use crate::losses::MarginConfig;
use crate::numeric::{normalized_distance, pca_project, DistanceMatrix};
use crate::{Error, Result};

/// Full evaluation summary, serialized by the harness as key-value text.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy_noisy: f64,
    pub accuracy_clean: f64,
    pub margin_occupancy: f64,
    pub mean_intra_pair_distance: f64,
    pub mean_inter_distance: f64,
    pub per_class_accuracy: Vec<f64>,
}

/// Fraction of exactly-correct predictions.
pub fn evaluate_accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch(predictions.len(), gold.len()));
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientPoints { got: 0, need: 1 });
    }
    let correct = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Per-class recall: fraction correct among gold examples of each class.
/// Classes absent from `gold` report 0.
pub fn per_class_accuracy(
    predictions: &[usize],
    gold: &[usize],
    num_classes: usize,
) -> Result<Vec<f64>> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch(predictions.len(), gold.len()));
    }
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        if g >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: g,
                num_classes,
            });
        }
        total[g] += 1;
        if p == g {
            correct[g] += 1;
        }
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect())
}

/// Fraction of off-diagonal distance entries strictly inside the margin
/// band. A 1x1 matrix has no off-diagonal entries and reports 0.
pub fn margin_occupancy(d: &DistanceMatrix, margin: &MarginConfig) -> f64 {
    let m = d.size();
    if m < 2 {
        return 0.0;
    }
    let mut inside = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j && margin.contains(d.get(i, j)) {
                inside += 1;
            }
        }
    }
    inside as f64 / (m * (m - 1)) as f64
}

/// Mean normalized distance over aligned clean/noisy pairs, and mean over
/// all cross-label row pairs in the stacked batch (0 when every row shares
/// one label). `labels` has one entry per pair.
pub fn cluster_distances(batch: &EmbeddingBatch, labels: &[usize]) -> Result<(f64, f64)> {
    let n = batch.num_pairs();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let rows = batch.rows();
    let mut intra = 0.0;
    for i in 0..n {
        intra += normalized_distance(rows.row(i), rows.row(batch.pair(i)))?;
    }
    intra /= n as f64;

    let row_label = |r: usize| labels[r % n];
    let m = rows.rows();
    let mut inter = 0.0;
    let mut count = 0usize;
    for a in 0..m {
        for b in (a + 1)..m {
            if row_label(a) != row_label(b) {
                inter += normalized_distance(rows.row(a), rows.row(b))?;
                count += 1;
            }
        }
    }
    let inter = if count == 0 { 0.0 } else { inter / count as f64 };
    Ok((intra, inter))
}

/// One line of the 2-D projection export.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub example_id: u64,
    pub side: Side,
    pub label: usize,
    pub pc1: f64,
    pub pc2: f64,
}

/// Project the stacked rows onto their top two principal directions,
/// labeling every output row with its example id, side, and class.
pub fn projection_rows(batch: &EmbeddingBatch, labels: &[usize]) -> Result<Vec<ProjectionRow>> {
    let n = batch.num_pairs();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let projected = pca_project(batch.rows(), 2)?;
    let mut out = Vec::with_capacity(projected.rows());
    for (r, &(example_id, side)) in batch.origin().iter().enumerate() {
        out.push(ProjectionRow {
            example_id,
            side,
            label: labels[r % n],
            pc1: projected.get(r, 0),
            pc2: projected.get(r, 1),
        });
    }
    Ok(out)
}
