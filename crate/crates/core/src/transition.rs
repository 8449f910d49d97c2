//! The K×K complementary-label transition matrix `T`, with
//! `T[i][j] = P(comp = j | true = i)`.
//!
//! Builders cover the four generation assumptions (uniform, biased, noisy,
//! empirical counting), plus validation, inversion with an explicit residual
//! check, and a plain-text file format.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::numeric::{Matrix, PrngStream};

/// Row sums must match 1 to this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Inversion fails if a pivot falls below this magnitude, or if the residual
/// check `max|T*Tinv - I|` is not under [`INVERSE_RESIDUAL_TOL`].
pub const PIVOT_TOL: f64 = 1e-12;
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum TransitionKind {
    Uniform,
    Biased,
    Noisy,
    Empirical,
    Custom,
}

impl TransitionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionKind::Uniform => "uniform",
            TransitionKind::Biased => "biased",
            TransitionKind::Noisy => "noisy",
            TransitionKind::Empirical => "empirical",
            TransitionKind::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uniform" => TransitionKind::Uniform,
            "biased" => TransitionKind::Biased,
            "noisy" => TransitionKind::Noisy,
            "empirical" => TransitionKind::Empirical,
            "custom" => TransitionKind::Custom,
            _ => return None,
        })
    }

    /// Only these kinds may carry nonzero diagonal entries (the true label
    /// can itself be handed out as a complementary label).
    pub fn allows_diagonal(&self) -> bool {
        matches!(self, TransitionKind::Noisy | TransitionKind::Empirical | TransitionKind::Custom)
    }
}

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error("class count must exceed 2, got {0}")]
    InvalidK(usize),
    #[error("biased construction needs (k-1) divisible by 3, got k={0}")]
    NotDivisible(usize),
    #[error("invalid bias triplet: {0}")]
    InvalidTriplet(String),
    #[error("lambda must lie in [0,1], got {0}")]
    InvalidLambda(f64),
    #[error("no (ordinary, complementary) pairs observed for class {0}")]
    EmptyRow(usize),
    #[error("label {label} out of range for k={k}")]
    LabelRange { label: usize, k: usize },
    #[error("transition matrix is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("transition matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("{0}")]
    Validation(Violation),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// First constraint violation found by [`TransitionMatrix::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { row: usize, sum: f64 },
    Range { row: usize, col: usize, value: f64 },
    Diagonal { row: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { row, sum } => {
                write!(f, "row {row} sums to {sum}, expected 1")
            }
            Violation::Range { row, col, value } => {
                write!(f, "entry ({row},{col}) = {value} outside [0,1]")
            }
            Violation::Diagonal { row, value } => {
                write!(f, "diagonal ({row},{row}) = {value} must be 0 for this kind")
            }
        }
    }
}

/// Per-subset probabilities for the biased construction. The complementary
/// classes of each row are split into three equal subsets; classes in subset
/// i each receive probability `p_i`. Values are per class, i.e. already
/// divided by the subset size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTriplet {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl BiasTriplet {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self, TransitionError> {
        if !(p1.is_finite() && p2.is_finite() && p3.is_finite()) {
            return Err(TransitionError::InvalidTriplet("non-finite probability".into()));
        }
        if p3 < 0.0 || p2 < p3 || p1 < p2 {
            return Err(TransitionError::InvalidTriplet(format!(
                "need p1 >= p2 >= p3 >= 0, got ({p1}, {p2}, {p3})"
            )));
        }
        Ok(BiasTriplet { p1, p2, p3 })
    }

    /// Strong deviation preset: (0.75/3, 0.24/3, 0.01/3).
    pub fn strong() -> Self {
        BiasTriplet { p1: 0.75 / 3.0, p2: 0.24 / 3.0, p3: 0.01 / 3.0 }
    }

    /// Weak deviation preset: (0.45/3, 0.30/3, 0.25/3).
    pub fn weak() -> Self {
        BiasTriplet { p1: 0.45 / 3.0, p2: 0.30 / 3.0, p3: 0.25 / 3.0 }
    }
}

/// Laplace smoothing policy for [`TransitionMatrix::from_pairs`]. Off by
/// default: silently smoothing would change T-aware losses invisibly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one pseudo-count to every (ordinary, complementary) cell.
    AddOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    t: Matrix,
    kind: TransitionKind,
}

impl TransitionMatrix {
    /// Uniform assumption: every wrong class is equally likely,
    /// off-diagonals 1/(k-1), zero diagonal.
    pub fn uniform(k: usize) -> Result<Self, TransitionError> {
        if k <= 2 {
            return Err(TransitionError::InvalidK(k));
        }
        let p = 1.0 / (k - 1) as f64;
        let mut t = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    t[(i, j)] = p;
                }
            }
        }
        Ok(TransitionMatrix { k, t, kind: TransitionKind::Uniform })
    }

    /// Biased assumption: per row, the k-1 complementary classes are
    /// partitioned uniformly at random into three equal subsets, and classes
    /// in subset i receive probability `triplet.p_i`. The partition is
    /// resampled independently for every row.
    pub fn biased(
        k: usize,
        triplet: BiasTriplet,
        rng: &mut PrngStream,
    ) -> Result<Self, TransitionError> {
        if k <= 2 {
            return Err(TransitionError::InvalidK(k));
        }
        if (k - 1) % 3 != 0 {
            return Err(TransitionError::NotDivisible(k));
        }
        // Re-run the ordering checks, then the row-sum consistency for this k:
        // subset_size * (p1+p2+p3) must be 1.
        let triplet = BiasTriplet::new(triplet.p1, triplet.p2, triplet.p3)?;
        let subset = (k - 1) / 3;
        let row_sum = subset as f64 * (triplet.p1 + triplet.p2 + triplet.p3);
        if (row_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(TransitionError::InvalidTriplet(format!(
                "{subset} classes per subset gives row sum {row_sum}, expected 1"
            )));
        }

        let probs = [triplet.p1, triplet.p2, triplet.p3];
        let mut t = Matrix::zeros(k, k);
        for i in 0..k {
            let mut others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            rng.shuffle(&mut others);
            for (pos, &j) in others.iter().enumerate() {
                t[(i, j)] = probs[pos / subset];
            }
        }
        Ok(TransitionMatrix { k, t, kind: TransitionKind::Biased })
    }

    /// Noisy assumption: interpolate `base` toward the flat matrix,
    /// `(1 - lambda) * base + lambda * (1/k) * ones`. The diagonal becomes
    /// exactly `lambda / k` when `base` has a zero diagonal.
    pub fn noisy(base: &TransitionMatrix, lambda: f64) -> Result<Self, TransitionError> {
        if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
            return Err(TransitionError::InvalidLambda(lambda));
        }
        let k = base.k;
        let flat = lambda / k as f64;
        let mut t = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                t[(i, j)] = (1.0 - lambda) * base.t[(i, j)] + flat;
            }
        }
        Ok(TransitionMatrix { k, t, kind: TransitionKind::Noisy })
    }

    /// Empirical estimation by counting: `t[i][j] = #(y=i, comp=j) / #(y=i)`.
    pub fn from_pairs(
        pairs: &[(usize, usize)],
        k: usize,
        smoothing: Smoothing,
    ) -> Result<Self, TransitionError> {
        if k <= 2 {
            return Err(TransitionError::InvalidK(k));
        }
        let mut counts = vec![0u64; k * k];
        let mut row_totals = vec![0u64; k];
        for &(y, comp) in pairs {
            if y >= k {
                return Err(TransitionError::LabelRange { label: y, k });
            }
            if comp >= k {
                return Err(TransitionError::LabelRange { label: comp, k });
            }
            counts[y * k + comp] += 1;
            row_totals[y] += 1;
        }
        let mut t = Matrix::zeros(k, k);
        for i in 0..k {
            match smoothing {
                Smoothing::None => {
                    if row_totals[i] == 0 {
                        return Err(TransitionError::EmptyRow(i));
                    }
                    let denom = row_totals[i] as f64;
                    for j in 0..k {
                        t[(i, j)] = counts[i * k + j] as f64 / denom;
                    }
                }
                Smoothing::AddOne => {
                    let denom = (row_totals[i] + k as u64) as f64;
                    for j in 0..k {
                        t[(i, j)] = (counts[i * k + j] + 1) as f64 / denom;
                    }
                }
            }
        }
        Ok(TransitionMatrix { k, t, kind: TransitionKind::Empirical })
    }

    /// Wrap an arbitrary row-stochastic matrix, validating it first.
    pub fn from_matrix(t: Matrix, kind: TransitionKind) -> Result<Self, TransitionError> {
        if t.rows() != t.cols() {
            return Err(TransitionError::NotSquare { rows: t.rows(), cols: t.cols() });
        }
        if t.rows() <= 2 {
            return Err(TransitionError::InvalidK(t.rows()));
        }
        let tm = TransitionMatrix { k: t.rows(), t, kind };
        if let Err(v) = tm.validate() {
            return Err(TransitionError::Validation(v));
        }
        Ok(tm)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> TransitionKind {
        self.kind
    }

    pub fn matrix(&self) -> &Matrix {
        &self.t
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.t.row(i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[(i, j)]
    }

    /// Check row sums, entry range, and the zero-diagonal rule for this kind.
    /// Returns the first violation found, scanning row-major.
    pub fn validate(&self) -> Result<(), Violation> {
        for i in 0..self.k {
            let mut sum = 0.0;
            for j in 0..self.k {
                let v = self.t[(i, j)];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Violation::Range { row: i, col: j, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Violation::RowSum { row: i, sum });
            }
            if !self.kind.allows_diagonal() && self.t[(i, i)] != 0.0 {
                return Err(Violation::Diagonal { row: i, value: self.t[(i, i)] });
            }
        }
        Ok(())
    }

    /// T^-1 by Gaussian elimination with partial pivoting. Fails loudly when
    /// a pivot falls under [`PIVOT_TOL`] or the residual `max|T*Tinv - I|`
    /// exceeds [`INVERSE_RESIDUAL_TOL`]; URE-style losses must not run on a
    /// silently bad inverse.
    pub fn invert(&self) -> Result<Matrix, TransitionError> {
        let k = self.k;
        // Augmented [T | I], eliminated in place.
        let mut a = self.t.clone();
        let mut inv = Matrix::zeros(k, k);
        for i in 0..k {
            inv[(i, i)] = 1.0;
        }

        for col in 0..k {
            let pivot_row = (col..k)
                .max_by(|&r1, &r2| {
                    a[(r1, col)].abs().partial_cmp(&a[(r2, col)].abs()).unwrap()
                })
                .unwrap();
            let pivot = a[(pivot_row, col)];
            if pivot.abs() < PIVOT_TOL {
                return Err(TransitionError::IllConditioned(format!(
                    "pivot {pivot:.3e} below tolerance at column {col}"
                )));
            }
            if pivot_row != col {
                for j in 0..k {
                    let tmp = a[(pivot_row, j)];
                    a[(pivot_row, j)] = a[(col, j)];
                    a[(col, j)] = tmp;
                    let tmp = inv[(pivot_row, j)];
                    inv[(pivot_row, j)] = inv[(col, j)];
                    inv[(col, j)] = tmp;
                }
            }
            let scale = 1.0 / a[(col, col)];
            for j in 0..k {
                a[(col, j)] *= scale;
                inv[(col, j)] *= scale;
            }
            for r in 0..k {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..k {
                    a[(r, j)] -= factor * a[(col, j)];
                    inv[(r, j)] -= factor * inv[(col, j)];
                }
            }
        }

        // Residual re-check: elimination can run to completion and still
        // produce garbage on a near-singular matrix.
        let product = self.t.matmul(&inv);
        let mut identity = Matrix::zeros(k, k);
        for i in 0..k {
            identity[(i, i)] = 1.0;
        }
        let residual = product.max_abs_diff(&identity);
        if residual > INVERSE_RESIDUAL_TOL {
            return Err(TransitionError::IllConditioned(format!(
                "inverse residual {residual:.3e} exceeds {INVERSE_RESIDUAL_TOL:.0e}"
            )));
        }
        Ok(inv)
    }

    /// Write as UTF-8 text: a `# kind=<tag>` comment, then k lines of k
    /// comma-separated decimals. Entries use the shortest round-trip `f64`
    /// representation, so save/load is exact.
    pub fn save(&self, path: &Path) -> Result<(), TransitionError> {
        let mut out = String::new();
        out.push_str(&format!("# kind={}\n", self.kind.as_str()));
        for i in 0..self.k {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load the format written by [`save`](Self::save). A missing kind line
    /// is read as `custom`.
    pub fn load(path: &Path) -> Result<Self, TransitionError> {
        let text = std::fs::read_to_string(path)?;
        let mut kind = TransitionKind::Custom;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(tag) = rest.strip_prefix("kind=") {
                    kind = TransitionKind::parse(tag.trim()).ok_or_else(|| {
                        TransitionError::Parse {
                            line: line_no,
                            msg: format!("unknown kind tag '{}'", tag.trim()),
                        }
                    })?;
                }
                continue;
            }
            let row: Result<Vec<f64>, _> = trimmed
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect();
            let row = row.map_err(|e| TransitionError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if let Some(w) = width {
                if row.len() != w {
                    return Err(TransitionError::Parse {
                        line: line_no,
                        msg: format!("expected {w} columns, found {}", row.len()),
                    });
                }
            } else {
                width = Some(row.len());
            }
            rows.push(row);
        }
        let k = rows.len();
        if width != Some(k) {
            return Err(TransitionError::Parse {
                line: text.lines().count(),
                msg: format!("{k} rows by {:?} columns is not square", width.unwrap_or(0)),
            });
        }
        let t = Matrix::from_rows(&rows).map_err(|e| TransitionError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        Self::from_matrix(t, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_k3_exact() {
        let t = TransitionMatrix::uniform(3).unwrap();
        let expected = [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t.get(i, j), expected[i][j]);
            }
        }
        assert_eq!(t.kind(), TransitionKind::Uniform);
    }

    #[test]
    fn uniform_rows_sum_exactly() {
        for k in [3, 4, 10, 17] {
            let t = TransitionMatrix::uniform(k).unwrap();
            for i in 0..k {
                let sum: f64 = t.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "k={k} row {i} sum {sum}");
                if i < k {
                    assert_eq!(t.get(i, i), 0.0);
                }
            }
            if k == 10 {
                assert!((t.get(0, 1) - 1.0 / 9.0).abs() < 1e-15);
            }
        }
        assert!(matches!(TransitionMatrix::uniform(2), Err(TransitionError::InvalidK(2))));
    }

    #[test]
    fn biased_row_multisets() {
        let mut rng = PrngStream::new(0);
        let t = TransitionMatrix::biased(10, BiasTriplet::strong(), &mut rng).unwrap();
        for i in 0..10 {
            assert_eq!(t.get(i, i), 0.0);
            let mut off: Vec<f64> = (0..10).filter(|&j| j != i).map(|j| t.get(i, j)).collect();
            off.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for v in &off[0..3] {
                assert!((v - 0.25).abs() < 1e-15);
            }
            for v in &off[3..6] {
                assert!((v - 0.08).abs() < 1e-15);
            }
            for v in &off[6..9] {
                assert!((v - 0.01 / 3.0).abs() < 1e-15);
            }
            let sum: f64 = t.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn biased_weak_multiset_and_determinism() {
        let t1 =
            TransitionMatrix::biased(10, BiasTriplet::weak(), &mut PrngStream::new(7)).unwrap();
        let t2 =
            TransitionMatrix::biased(10, BiasTriplet::weak(), &mut PrngStream::new(7)).unwrap();
        assert_eq!(t1, t2);
        let mut off: Vec<f64> = (1..10).map(|j| t1.get(0, j)).collect();
        off.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((off[0] - 0.15).abs() < 1e-15);
        assert!((off[3] - 0.10).abs() < 1e-15);
        assert!((off[6] - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn biased_k4_degenerate_reduces_to_uniform() {
        let triplet = BiasTriplet::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let t = TransitionMatrix::biased(4, triplet, &mut PrngStream::new(1)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((t.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn biased_rejects_bad_inputs() {
        let mut rng = PrngStream::new(0);
        assert!(matches!(
            TransitionMatrix::biased(9, BiasTriplet::strong(), &mut rng),
            Err(TransitionError::NotDivisible(9))
        ));
        assert!(BiasTriplet::new(0.1, 0.2, 0.05).is_err()); // p1 < p2
        assert!(BiasTriplet::new(0.3, 0.2, -0.01).is_err());
        // Strong triplet is only consistent with k=10-style subsets of 3.
        assert!(matches!(
            TransitionMatrix::biased(4, BiasTriplet::strong(), &mut rng),
            Err(TransitionError::InvalidTriplet(_))
        ));
    }

    #[test]
    fn noisy_endpoints_and_midpoint() {
        let base =
            TransitionMatrix::biased(10, BiasTriplet::strong(), &mut PrngStream::new(3)).unwrap();

        let t0 = TransitionMatrix::noisy(&base, 0.0).unwrap();
        assert!(t0.matrix().max_abs_diff(base.matrix()) < 1e-15);

        let t1 = TransitionMatrix::noisy(&base, 1.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!((t1.get(i, j) - 0.1).abs() < 1e-15);
            }
        }

        let t_half = TransitionMatrix::noisy(&base, 0.5).unwrap();
        for i in 0..10 {
            assert!((t_half.get(i, i) - 0.05).abs() < 1e-15);
        }
        // A 0.25 entry moves to 0.5*0.25 + 0.05 = 0.175.
        let (i, j) = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .find(|&(i, j)| (base.get(i, j) - 0.25).abs() < 1e-12)
            .unwrap();
        assert!((t_half.get(i, j) - 0.175).abs() < 1e-15);

        assert!(matches!(
            TransitionMatrix::noisy(&base, 1.5),
            Err(TransitionError::InvalidLambda(_))
        ));
    }

    #[test]
    fn from_pairs_counting_oracle() {
        let pairs = [(0, 1), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];
        let t = TransitionMatrix::from_pairs(&pairs, 3, Smoothing::None).unwrap();
        let expected = [
            [0.0, 2.0 / 3.0, 1.0 / 3.0],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
        assert_eq!(t.kind(), TransitionKind::Empirical);
    }

    #[test]
    fn from_pairs_empty_row_and_smoothing() {
        let pairs = [(0, 1), (1, 0)];
        assert!(matches!(
            TransitionMatrix::from_pairs(&pairs, 3, Smoothing::None),
            Err(TransitionError::EmptyRow(2))
        ));
        let t = TransitionMatrix::from_pairs(&pairs, 3, Smoothing::AddOne).unwrap();
        // Row 2 had no observations: uniform over all k cells.
        for j in 0..3 {
            assert!((t.get(2, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        // Row 0: counts (0,1,0)+1 over 1+3.
        assert!((t.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((t.get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invert_uniform_closed_form() {
        // Uniform T has inverse J - (k-1)I.
        for k in [3, 5, 10] {
            let t = TransitionMatrix::uniform(k).unwrap();
            let inv = t.invert().unwrap();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 - (k as f64 - 1.0) } else { 1.0 };
                    assert!(
                        (inv[(i, j)] - expect).abs() < 1e-9,
                        "k={k} entry ({i},{j}) = {}",
                        inv[(i, j)]
                    );
                }
            }
            // Multiplication oracle.
            let prod = t.matrix().matmul(&inv);
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - expect).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn invert_identity_like_is_self() {
        let mut m = Matrix::zeros(3, 3);
        for i in 0..3 {
            m[(i, i)] = 1.0;
        }
        let t = TransitionMatrix::from_matrix(m, TransitionKind::Custom).unwrap();
        let inv = t.invert().unwrap();
        assert!(inv.max_abs_diff(t.matrix()) < 1e-12);
    }

    #[test]
    fn invert_rank_deficient_fails() {
        let rows = vec![
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.5, 0.0],
        ];
        let t = TransitionMatrix::from_matrix(
            Matrix::from_rows(&rows).unwrap(),
            TransitionKind::Custom,
        )
        .unwrap();
        assert!(matches!(t.invert(), Err(TransitionError::IllConditioned(_))));
    }

    #[test]
    fn validate_reports_first_violation() {
        assert!(TransitionMatrix::uniform(5).unwrap().validate().is_ok());

        let mut bad = TransitionMatrix::uniform(3).unwrap();
        bad.t[(0, 1)] = -0.1;
        bad.t[(0, 2)] = 1.1;
        match bad.validate() {
            Err(Violation::Range { row: 0, col: 1, .. }) => {}
            other => panic!("expected range violation, got {other:?}"),
        }

        let mut diag = TransitionMatrix::uniform(3).unwrap();
        diag.t[(0, 0)] = 0.2;
        diag.t[(0, 1)] = 0.4;
        diag.t[(0, 2)] = 0.4;
        match diag.validate() {
            Err(Violation::Diagonal { row: 0, .. }) => {}
            other => panic!("expected diagonal violation, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t =
            TransitionMatrix::biased(10, BiasTriplet::weak(), &mut PrngStream::new(5)).unwrap();
        t.save(&path).unwrap();
        let loaded = TransitionMatrix::load(&path).unwrap();
        assert_eq!(loaded.kind(), TransitionKind::Biased);
        assert!(loaded.matrix().max_abs_diff(t.matrix()) == 0.0);
    }

    #[test]
    fn load_rejects_non_square_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("rect.csv");
        std::fs::write(&p1, "0,0.5,0.5\n0.5,0,0.5\n").unwrap();
        assert!(matches!(TransitionMatrix::load(&p1), Err(TransitionError::Parse { .. })));

        let p2 = dir.path().join("rowsum.csv");
        std::fs::write(&p2, "0,0.4,0.5\n0.5,0,0.5\n0.5,0.5,0\n").unwrap();
        assert!(matches!(
            TransitionMatrix::load(&p2),
            Err(TransitionError::Validation(Violation::RowSum { row: 0, .. }))
        ));
    }
}
