//! Complementary-label sampling.
//!
//! Single labels are drawn from a transition-matrix row by inverse CDF with
//! exactly one uniform draw per instance, consumed in instance order — a fixed
//! consumption pattern keeps streams reproducible when datasets are sliced.
//! Multiple labels are drawn uniformly without replacement from the complement
//! of the true label. Multi-label data can be decomposed into single-label
//! instances for strategies that only accept one label.

use thiserror::Error;

use crate::numeric::{Matrix, PrngStream};
use crate::transition::TransitionMatrix;

#[derive(Debug, Error)]
pub enum LabelGenError {
    #[error("label {label} out of range for k={k} at instance {index}")]
    LabelRange { index: usize, label: usize, k: usize },
    #[error("labels per instance must satisfy 1 <= m <= k-1, got m={m} for k={k}")]
    InvalidM { m: usize, k: usize },
    #[error("instance {index} has an empty complementary-label set")]
    EmptySet { index: usize },
    #[error("feature rows ({rows}) do not match label count ({labels})")]
    CountMismatch { rows: usize, labels: usize },
}

/// Features plus one or more complementary labels per instance. Ordinary
/// labels ride along when known; they are used only for evaluation, empirical
/// transition estimation, and validation-set accuracy.
#[derive(Debug, Clone)]
pub struct ComplementaryDataset {
    pub features: Matrix,
    /// Sorted, distinct labels per instance; 1 <= len <= k-1.
    pub cl_sets: Vec<Vec<usize>>,
    pub true_labels: Option<Vec<usize>>,
    pub k: usize,
}

impl ComplementaryDataset {
    pub fn new(
        features: Matrix,
        cl_sets: Vec<Vec<usize>>,
        true_labels: Option<Vec<usize>>,
        k: usize,
    ) -> Result<Self, LabelGenError> {
        if features.rows() != cl_sets.len() {
            return Err(LabelGenError::CountMismatch {
                rows: features.rows(),
                labels: cl_sets.len(),
            });
        }
        if let Some(labels) = &true_labels {
            if labels.len() != cl_sets.len() {
                return Err(LabelGenError::CountMismatch {
                    rows: labels.len(),
                    labels: cl_sets.len(),
                });
            }
            for (i, &y) in labels.iter().enumerate() {
                if y >= k {
                    return Err(LabelGenError::LabelRange { index: i, label: y, k });
                }
            }
        }
        // Canonical form: sorted sets, validated range and size.
        let mut cl_sets = cl_sets;
        for (i, set) in cl_sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(LabelGenError::EmptySet { index: i });
            }
            if set.len() > k - 1 {
                return Err(LabelGenError::InvalidM { m: set.len(), k });
            }
            for &c in set.iter() {
                if c >= k {
                    return Err(LabelGenError::LabelRange { index: i, label: c, k });
                }
            }
            set.sort_unstable();
        }
        Ok(ComplementaryDataset { features, cl_sets, true_labels, k })
    }

    pub fn len(&self) -> usize {
        self.cl_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cl_sets.is_empty()
    }

    /// True when every instance carries exactly one complementary label.
    pub fn is_single(&self) -> bool {
        self.cl_sets.iter().all(|s| s.len() == 1)
    }

    /// The single label per instance. Panics if any set has more than one;
    /// call [`decompose_multi`] first.
    pub fn single_labels(&self) -> Vec<usize> {
        self.cl_sets
            .iter()
            .map(|s| {
                assert_eq!(s.len(), 1, "dataset still holds multi-label sets");
                s[0]
            })
            .collect()
    }
}

/// Draw one complementary label per instance from row `y_i` of `t`.
pub fn generate_single(
    labels: &[usize],
    t: &TransitionMatrix,
    rng: &mut PrngStream,
) -> Result<Vec<usize>, LabelGenError> {
    let k = t.k();
    let mut out = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(LabelGenError::LabelRange { index: i, label: y, k });
        }
        out.push(sample_row(t.row(y), rng.next_f64()));
    }
    Ok(out)
}

/// Inverse CDF over one row. Floating-point shortfall in the cumulative sum
/// falls through to the last class with positive probability.
fn sample_row(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
        }
        cum += p;
        if u < cum {
            return j;
        }
    }
    last_positive
}

/// Draw `m` distinct labels per instance, uniformly without replacement from
/// the complement of the true label. Draw order is preserved in the output.
pub fn generate_multi(
    labels: &[usize],
    m: usize,
    k: usize,
    rng: &mut PrngStream,
) -> Result<Vec<Vec<usize>>, LabelGenError> {
    if m == 0 || m > k - 1 {
        return Err(LabelGenError::InvalidM { m, k });
    }
    let mut out = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(LabelGenError::LabelRange { index: i, label: y, k });
        }
        let mut pool: Vec<usize> = (0..k).filter(|&c| c != y).collect();
        // Partial Fisher-Yates: position j takes a uniform pick from pool[j..].
        let mut set = Vec::with_capacity(m);
        for j in 0..m {
            let pick = j + rng.next_index(pool.len() - j);
            pool.swap(j, pick);
            set.push(pool[j]);
        }
        out.push(set);
    }
    Ok(out)
}

/// Expand every instance with `m` labels into `m` single-label instances
/// sharing the feature row, then shuffle the result uniformly. The multiset
/// of (feature row, label) pairs is preserved exactly; only order changes.
pub fn decompose_multi(
    ds: &ComplementaryDataset,
    rng: &mut PrngStream,
) -> ComplementaryDataset {
    let total: usize = ds.cl_sets.iter().map(|s| s.len()).sum();
    let mut expanded: Vec<(usize, usize)> = Vec::with_capacity(total);
    for (i, set) in ds.cl_sets.iter().enumerate() {
        for &c in set {
            expanded.push((i, c));
        }
    }
    rng.shuffle(&mut expanded);

    let d = ds.features.cols();
    let mut features = Matrix::zeros(total, d);
    let mut cl_sets = Vec::with_capacity(total);
    let mut true_labels = ds.true_labels.as_ref().map(|_| Vec::with_capacity(total));
    for (dst, &(src, c)) in expanded.iter().enumerate() {
        features.row_mut(dst).copy_from_slice(ds.features.row(src));
        cl_sets.push(vec![c]);
        if let (Some(out), Some(labels)) = (true_labels.as_mut(), ds.true_labels.as_ref()) {
            out.push(labels[src]);
        }
    }
    ComplementaryDataset { features, cl_sets, true_labels, k: ds.k }
}
