//! Evaluation: ordinary-label accuracy, the two complementary-label-only
//! validation metrics (URE and SCEL), trial aggregation, and average-rank
//! tables in the benchmark layout (strategies as rows, datasets as columns,
//! final average-rank column).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelgen::ComplementaryDataset;
use crate::model::MlpModel;
use crate::numeric::{clamped_ln, softmax_into, Matrix};
use crate::transition::{TransitionError, TransitionMatrix};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("validation instance {index} must carry exactly one complementary label")]
    MultiClValidation { index: usize },
    #[error("missing cell for dataset '{dataset}', strategy '{strategy}'")]
    MissingCell { dataset: String, strategy: String },
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Fraction of exact matches. Empty inputs are an error, not 0/0.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Unbiased 0-1 risk estimate from complementary labels alone:
/// mean over the validation set of `(Tinv * l01)[comp]` where
/// `l01_k = 1[pred != k]`. Single samples can legitimately exceed 1.
pub fn ure_validation(
    model: &MlpModel,
    val: &ComplementaryDataset,
    t: &TransitionMatrix,
) -> Result<f64, MetricsError> {
    let preds = model.predict(&val.features)?;
    let tinv = t.invert()?;
    ure_validation_from_preds(&preds, val, &tinv)
}

/// Same estimator, but with predictions supplied by the caller (CPE
/// strategies predict by decoding rather than argmax) and a cached inverse.
pub fn ure_validation_from_preds(
    preds: &[usize],
    val: &ComplementaryDataset,
    t_inverse: &Matrix,
) -> Result<f64, MetricsError> {
    if preds.len() != val.len() || val.is_empty() {
        return Err(MetricsError::LengthMismatch { left: preds.len(), right: val.len() });
    }
    let k = t_inverse.rows();
    let mut total = 0.0;
    for i in 0..val.len() {
        if val.cl_sets[i].len() != 1 {
            return Err(MetricsError::MultiClValidation { index: i });
        }
        let comp = val.cl_sets[i][0];
        let row = t_inverse.row(comp);
        // (Tinv l01)[comp] with l01_k = 1 - delta(pred = k).
        let mut v = 0.0;
        for c in 0..k {
            if c != preds[i] {
                v += row[c];
            }
        }
        total += v;
    }
    Ok(total / val.len() as f64)
}

/// Surrogate complementary estimation loss: mean of
/// `-log((T^t softmax(f(x)))[comp])`, clamped. Nonnegative, zero only when
/// the composed probability of the observed label is 1.
pub fn scel_validation(
    model: &MlpModel,
    val: &ComplementaryDataset,
    t: &TransitionMatrix,
) -> Result<f64, MetricsError> {
    let (logits, _) = model.forward(&val.features)?;
    scel_from_logits(&logits, val, t)
}

pub fn scel_from_logits(
    logits: &Matrix,
    val: &ComplementaryDataset,
    t: &TransitionMatrix,
) -> Result<f64, MetricsError> {
    if logits.rows() != val.len() || val.is_empty() {
        return Err(MetricsError::LengthMismatch { left: logits.rows(), right: val.len() });
    }
    let k = t.k();
    let mut p = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..val.len() {
        if val.cl_sets[i].len() != 1 {
            return Err(MetricsError::MultiClValidation { index: i });
        }
        let comp = val.cl_sets[i][0];
        softmax_into(&mut p, logits.row(i));
        let q: f64 = (0..k).map(|j| t.get(j, comp) * p[j]).sum();
        total += -clamped_ln(q);
    }
    Ok(total / val.len() as f64)
}

/// One epoch of one trial, as written to the result log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// The outcome of a single (dataset, strategy, seed) trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub dataset: String,
    pub strategy: String,
    pub seed: u64,
    pub lr: f64,
    pub val_metric_name: String,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub test_accuracy: f64,
}

/// Mean and sample standard deviation (N-1 denominator, 0 for a single
/// trial) for one (dataset, strategy) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn cell_stats(values: &[f64]) -> CellStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    CellStats { mean, std, n }
}

/// Group trial accuracies by (dataset, strategy).
pub fn aggregate_trials(results: &[TrialResult]) -> BTreeMap<(String, String), CellStats> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.dataset.clone(), r.strategy.clone()))
            .or_default()
            .push(r.test_accuracy);
    }
    groups.into_iter().map(|(key, accs)| (key, cell_stats(&accs))).collect()
}

/// Benchmark table: per-dataset mean±std and rank for each strategy, plus the
/// average rank across datasets (rank 1 = best accuracy; ties share the
/// average of the positions they occupy).
#[derive(Debug, Clone)]
pub struct RankTable {
    pub strategies: Vec<String>,
    pub datasets: Vec<String>,
    /// cells[strategy][dataset]
    pub cells: Vec<Vec<CellStats>>,
    /// ranks[strategy][dataset]
    pub ranks: Vec<Vec<f64>>,
    pub avg_rank: Vec<f64>,
}

/// Build a rank table from per-cell statistics. Every (strategy, dataset)
/// cell must be present.
pub fn average_rank(
    strategies: &[String],
    datasets: &[String],
    stats: &BTreeMap<(String, String), CellStats>,
) -> Result<RankTable, MetricsError> {
    let mut cells = Vec::with_capacity(strategies.len());
    for s in strategies {
        let mut row = Vec::with_capacity(datasets.len());
        for d in datasets {
            let cell = stats.get(&(d.clone(), s.clone())).copied().ok_or_else(|| {
                MetricsError::MissingCell { dataset: d.clone(), strategy: s.clone() }
            })?;
            row.push(cell);
        }
        cells.push(row);
    }

    let mut ranks = vec![vec![0.0; datasets.len()]; strategies.len()];
    for (d, _) in datasets.iter().enumerate() {
        let column: Vec<f64> = cells.iter().map(|row| row[d].mean).collect();
        for (s, r) in rank_descending(&column).into_iter().enumerate() {
            ranks[s][d] = r;
        }
    }
    let avg_rank: Vec<f64> = ranks
        .iter()
        .map(|row| row.iter().sum::<f64>() / datasets.len().max(1) as f64)
        .collect();
    Ok(RankTable {
        strategies: strategies.to_vec(),
        datasets: datasets.to_vec(),
        cells,
        ranks,
        avg_rank,
    })
}

/// Rank values descending (largest gets rank 1); exact ties share the average
/// of the positions they cover.
fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos + 1;
        while end < order.len() && values[order[end]] == values[order[pos]] {
            end += 1;
        }
        // Positions pos..end (0-based) hold equal values; they share the
        // average 1-based rank.
        let shared = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = shared;
        }
        pos = end;
    }
    ranks
}

impl RankTable {
    /// Aligned plain-text rendering. `split_after` draws a separator after
    /// that many strategy rows (the benchmark groups T-agnostic above and
    /// T-aware below).
    pub fn render_text(&self, split_after: Option<usize>) -> String {
        let mut col_widths: Vec<usize> =
            self.datasets.iter().map(|d| d.len().max(14)).collect();
        let name_width =
            self.strategies.iter().map(|s| s.len()).max().unwrap_or(8).max(8);
        for (d, w) in col_widths.iter_mut().enumerate() {
            for row in &self.cells {
                let cell = format_cell(&row[d]);
                *w = (*w).max(cell.len());
            }
        }

        let mut out = String::new();
        out.push_str(&format!("{:<name_width$}", "strategy"));
        for (d, w) in self.datasets.iter().zip(&col_widths) {
            out.push_str(&format!("  {d:>w$}"));
        }
        out.push_str("  avg rank\n");
        let total_width =
            name_width + col_widths.iter().map(|w| w + 2).sum::<usize>() + 10;
        out.push_str(&"-".repeat(total_width));
        out.push('\n');

        for (s, name) in self.strategies.iter().enumerate() {
            if let Some(split) = split_after {
                if s == split && split > 0 {
                    out.push_str(&"-".repeat(total_width));
                    out.push('\n');
                }
            }
            out.push_str(&format!("{name:<name_width$}"));
            for (d, w) in (0..self.datasets.len()).zip(&col_widths) {
                out.push_str(&format!("  {:>w$}", format_cell(&self.cells[s][d])));
            }
            out.push_str(&format!("  {:>8.2}\n", self.avg_rank[s]));
        }
        out
    }

    /// CSV rendering: strategy rows, dataset mean/std pairs, final avg rank.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("strategy");
        for d in &self.datasets {
            out.push_str(&format!(",{d}_mean,{d}_std"));
        }
        out.push_str(",avg_rank\n");
        for (s, name) in self.strategies.iter().enumerate() {
            out.push_str(name);
            for d in 0..self.datasets.len() {
                let cell = &self.cells[s][d];
                out.push_str(&format!(",{},{}", cell.mean, cell.std));
            }
            out.push_str(&format!(",{}\n", self.avg_rank[s]));
        }
        out
    }
}

fn format_cell(cell: &CellStats) -> String {
    format!("{:.2}±{:.2}", 100.0 * cell.mean, 100.0 * cell.std)
}
