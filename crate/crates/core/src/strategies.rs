//! The fifteen complementary-label strategy losses.
//!
//! Every loss maps (logits, complementary labels, optional transition matrix)
//! to a batch-mean scalar and the exact gradient with respect to the logits.
//! Gradients are what the model's backward pass consumes; they already carry
//! the 1/N batch-mean factor.
//!
//! Families:
//! - SCL: surrogate losses on the complementary probability `p_comp`
//!   (negative-log and exponential variants).
//! - PC: pairwise logistic comparison pushing the complementary score below
//!   every other score.
//! - FWD: forward correction, cross-entropy on `q = T^t p`.
//! - URE: unbiased risk estimator through `T^-1`, with non-negative (NN) and
//!   gradient-ascent (GA) corrections for negative per-class partial risks.
//! - DM: cross-entropy on the softmax of negated logits.
//! - MCL: losses on the probability mass outside the complementary set
//!   (MAE / EXP / LOG variants), the only family that accepts multi-label
//!   sets directly.
//! - CPE: complementary probability estimation with an identity, fixed, or
//!   trainable transition layer, decoded at prediction time by matching the
//!   transition rows.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numeric::{clamped_ln, sigmoid, softmax_into, Matrix, LOG_FLOOR};
use crate::transition::{TransitionError, TransitionMatrix};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("strategy {0} accepts a single complementary label per instance; decompose multi-label data first")]
    MultiClUnsupported(StrategyName),
    #[error("instance {index} lists every class as complementary")]
    FullSet { index: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for k={k} at instance {index}")]
    LabelRange { index: usize, label: usize, k: usize },
    #[error("strategy {0} requires a transition matrix")]
    MissingTransition(StrategyName),
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

/// The fifteen strategies, named as they appear on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyName {
    Pc,
    SclNl,
    SclExp,
    UreNn,
    UreGa,
    UreTnn,
    UreTga,
    Fwd,
    Dm,
    MclMae,
    MclExp,
    MclLog,
    CpeI,
    CpeF,
    CpeT,
}

impl StrategyName {
    /// T-agnostic strategies first, T-aware after — the order used for
    /// benchmark tables.
    pub const ALL: [StrategyName; 15] = [
        StrategyName::Pc,
        StrategyName::SclNl,
        StrategyName::SclExp,
        StrategyName::UreNn,
        StrategyName::UreGa,
        StrategyName::Dm,
        StrategyName::MclMae,
        StrategyName::MclExp,
        StrategyName::MclLog,
        StrategyName::Fwd,
        StrategyName::UreTnn,
        StrategyName::UreTga,
        StrategyName::CpeI,
        StrategyName::CpeF,
        StrategyName::CpeT,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyName::Pc => "PC",
            StrategyName::SclNl => "SCL-NL",
            StrategyName::SclExp => "SCL-EXP",
            StrategyName::UreNn => "URE-NN",
            StrategyName::UreGa => "URE-GA",
            StrategyName::UreTnn => "URE-TNN",
            StrategyName::UreTga => "URE-TGA",
            StrategyName::Fwd => "FWD",
            StrategyName::Dm => "DM",
            StrategyName::MclMae => "MCL-MAE",
            StrategyName::MclExp => "MCL-EXP",
            StrategyName::MclLog => "MCL-LOG",
            StrategyName::CpeI => "CPE-I",
            StrategyName::CpeF => "CPE-F",
            StrategyName::CpeT => "CPE-T",
        }
    }

    /// Whether the strategy consumes a supplied transition matrix. T-agnostic
    /// strategies either ignore T or assume the uniform one internally.
    pub fn is_t_aware(&self) -> bool {
        matches!(
            self,
            StrategyName::Fwd
                | StrategyName::UreTnn
                | StrategyName::UreTga
                | StrategyName::CpeI
                | StrategyName::CpeF
                | StrategyName::CpeT
        )
    }

    /// Whether the strategy consumes multi-label sets directly. Everything
    /// else requires decomposed single-label data.
    pub fn accepts_multi(&self) -> bool {
        matches!(self, StrategyName::MclMae | StrategyName::MclExp | StrategyName::MclLog)
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, StrategyError> {
        let up = s.to_ascii_uppercase();
        StrategyName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == up)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

/// How the strategy treats the transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TMode {
    Agnostic,
    Fixed,
    Trainable,
}

/// Per-class base loss for the URE family. The rewrite admits arbitrary
/// losses; negative log probability is the shipped default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UreBase {
    #[default]
    LogLoss,
    /// `1 - p_k`, the mean-absolute-error style base.
    OneMinusProb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySpec {
    pub name: StrategyName,
    pub t_mode: TMode,
    pub ure_base: UreBase,
}

impl StrategySpec {
    /// The transition mode is implied by the name: CPE-T trains its matrix,
    /// the other T-aware strategies take it as fixed, the rest are agnostic.
    pub fn new(name: StrategyName) -> StrategySpec {
        let t_mode = match name {
            StrategyName::CpeT => TMode::Trainable,
            n if n.is_t_aware() => TMode::Fixed,
            _ => TMode::Agnostic,
        };
        StrategySpec { name, t_mode, ure_base: UreBase::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SclVariant {
    Nl,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MclVariant {
    Mae,
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UreCorrection {
    /// Plain rewritten risk, no correction.
    None,
    /// Clamp negative per-class partial risks to zero (their gradient is
    /// dropped).
    NonNegative,
    /// Report the uncorrected risk but flip the gradient sign on negative
    /// partial risks, ascending on them within the same update.
    GradientAscent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpeVariant {
    Identity,
    Fixed,
    Trainable,
}

/// A loss evaluation: batch-mean scalar, exact gradient w.r.t. logits, and
/// for CPE-T the gradient w.r.t. the free transition parameters.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub dlogits: Matrix,
    pub d_trainable: Option<Matrix>,
}

/// Free-parameter K×K matrix realized as a row-stochastic transition layer
/// via row-wise softmax, so the simplex constraint holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableT {
    k: usize,
    params: Matrix,
}

impl TrainableT {
    /// Start the realized matrix at `t` (entries log-clamped, so exact zeros
    /// become ~1e-12 after the row softmax).
    pub fn init_at(t: &TransitionMatrix) -> TrainableT {
        let k = t.k();
        let mut params = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                params[(i, j)] = clamped_ln(t.get(i, j));
            }
        }
        TrainableT { k, params }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The row-stochastic matrix these parameters currently realize.
    pub fn realized(&self) -> Matrix {
        let mut m = Matrix::zeros(self.k, self.k);
        for i in 0..self.k {
            softmax_into(m.row_mut(i), self.params.row(i));
        }
        m
    }

    pub fn params(&self) -> &Matrix {
        &self.params
    }

    pub fn params_flat(&self) -> &[f64] {
        self.params.data()
    }

    pub fn params_flat_mut(&mut self) -> &mut [f64] {
        self.params.data_mut()
    }
}

/// SCL losses on the complementary probability: NL is `-log(1 - p_comp)`,
/// EXP is `exp(p_comp)`.
pub fn scl(
    variant: SclVariant,
    logits: &Matrix,
    cls: &[usize],
) -> Result<LossGrad, StrategyError> {
    check_single(logits, cls)?;
    let (n, k) = (logits.rows(), logits.cols());
    let mut dlogits = Matrix::zeros(n, k);
    let mut p = vec![0.0; k];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        softmax_into(&mut p, logits.row(i));
        let comp = cls[i];
        let p_comp = p[comp];
        match variant {
            SclVariant::Nl => {
                let s = 1.0 - p_comp;
                loss += -clamped_ln(s);
                if s > LOG_FLOOR {
                    let scale = p_comp / s * inv_n;
                    for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
                        let delta = if j == comp { 1.0 } else { 0.0 };
                        *out = scale * (delta - p[j]);
                    }
                }
            }
            SclVariant::Exp => {
                let e = p_comp.exp();
                loss += e;
                let scale = e * p_comp * inv_n;
                for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
                    let delta = if j == comp { 1.0 } else { 0.0 };
                    *out = scale * (delta - p[j]);
                }
            }
        }
    }
    Ok(LossGrad { loss: loss * inv_n, dlogits, d_trainable: None })
}

/// Pairwise-comparison loss: the complementary score is pushed below every
/// other score through a logistic surrogate.
pub fn pc(logits: &Matrix, cls: &[usize]) -> Result<LossGrad, StrategyError> {
    check_single(logits, cls)?;
    let (n, k) = (logits.rows(), logits.cols());
    let mut dlogits = Matrix::zeros(n, k);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.row(i);
        let comp = cls[i];
        let z_comp = row[comp];
        let mut d_comp = 0.0;
        for j in 0..k {
            if j == comp {
                continue;
            }
            let s = sigmoid(z_comp - row[j]);
            loss += s;
            let ds = s * (1.0 - s) * inv_n;
            d_comp += ds;
            dlogits[(i, j)] = -ds;
        }
        dlogits[(i, comp)] = d_comp;
    }
    Ok(LossGrad { loss: loss * inv_n, dlogits, d_trainable: None })
}

/// Forward correction: cross-entropy on the composed complementary
/// probability `q = T^t softmax(logits)`.
pub fn fwd(
    logits: &Matrix,
    cls: &[usize],
    t: &TransitionMatrix,
) -> Result<LossGrad, StrategyError> {
    check_single(logits, cls)?;
    if t.k() != logits.cols() {
        return Err(StrategyError::ShapeMismatch(format!(
            "transition matrix is {}x{0} but logits have {} classes",
            t.k(),
            logits.cols()
        )));
    }
    composed_ce(logits, cls, Some(t.matrix()), None).map(|(loss, dlogits, _)| LossGrad {
        loss,
        dlogits,
        d_trainable: None,
    })
}

/// Per-class partial risks `R_k = mean_i Tinv[comp_i, k] * base(p_k(x_i))`.
/// Their sum is the rewritten (uncorrected) risk estimate.
pub fn ure_partials(
    logits: &Matrix,
    cls: &[usize],
    t_inverse: &Matrix,
    base: UreBase,
) -> Result<Vec<f64>, StrategyError> {
    check_single(logits, cls)?;
    let (n, k) = (logits.rows(), logits.cols());
    let mut partials = vec![0.0; k];
    let mut p = vec![0.0; k];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        softmax_into(&mut p, logits.row(i));
        let tinv_row = t_inverse.row(cls[i]);
        for c in 0..k {
            partials[c] += tinv_row[c] * base_value(base, p[c]) * inv_n;
        }
    }
    Ok(partials)
}

/// Unbiased risk estimator with the given correction, taking a precomputed
/// `T^-1` (the trainer caches it; [`ure`] inverts on the fly).
pub fn ure_with_inverse(
    correction: UreCorrection,
    logits: &Matrix,
    cls: &[usize],
    t_inverse: &Matrix,
    base: UreBase,
) -> Result<LossGrad, StrategyError> {
    let (n, k) = (logits.rows(), logits.cols());
    if t_inverse.rows() != k || t_inverse.cols() != k {
        return Err(StrategyError::ShapeMismatch(format!(
            "inverse is {}x{}, logits have {k} classes",
            t_inverse.rows(),
            t_inverse.cols()
        )));
    }
    let partials = ure_partials(logits, cls, t_inverse, base)?;

    let loss = match correction {
        UreCorrection::None | UreCorrection::GradientAscent => partials.iter().sum(),
        UreCorrection::NonNegative => partials.iter().map(|r| r.max(0.0)).sum(),
    };
    // Per-class gradient weights implied by the correction.
    let weights: Vec<f64> = partials
        .iter()
        .map(|&r| match correction {
            UreCorrection::None => 1.0,
            UreCorrection::NonNegative => {
                if r >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UreCorrection::GradientAscent => {
                if r >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect();

    let mut dlogits = Matrix::zeros(n, k);
    let mut p = vec![0.0; k];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        softmax_into(&mut p, logits.row(i));
        let tinv_row = t_inverse.row(cls[i]);
        match base {
            UreBase::LogLoss => {
                // d(-ln p_c)/dz_j = p_j - delta_jc, zero when the log clamp
                // is active for class c.
                let mut coeff_sum = 0.0;
                for c in 0..k {
                    if p[c] > LOG_FLOOR {
                        coeff_sum += weights[c] * tinv_row[c];
                    }
                }
                for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
                    let own = if p[j] > LOG_FLOOR { weights[j] * tinv_row[j] } else { 0.0 };
                    *out = (p[j] * coeff_sum - own) * inv_n;
                }
            }
            UreBase::OneMinusProb => {
                // d(1 - p_c)/dz_j = p_c * p_j - p_c * delta_jc.
                let mut weighted_p = 0.0;
                for c in 0..k {
                    weighted_p += weights[c] * tinv_row[c] * p[c];
                }
                for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
                    *out = (p[j] * weighted_p - weights[j] * tinv_row[j] * p[j]) * inv_n;
                }
            }
        }
    }
    Ok(LossGrad { loss, dlogits, d_trainable: None })
}

/// Unbiased risk estimator; inverts `t` (failing loudly on ill-conditioned
/// matrices) and delegates to [`ure_with_inverse`].
pub fn ure(
    correction: UreCorrection,
    logits: &Matrix,
    cls: &[usize],
    t: &TransitionMatrix,
    base: UreBase,
) -> Result<LossGrad, StrategyError> {
    let t_inverse = t.invert()?;
    ure_with_inverse(correction, logits, cls, &t_inverse, base)
}

fn base_value(base: UreBase, p: f64) -> f64 {
    match base {
        UreBase::LogLoss => -clamped_ln(p),
        UreBase::OneMinusProb => 1.0 - p,
    }
}

/// Discriminative modeling: cross-entropy of the complementary label against
/// the softmax of negated logits. Prediction stays argmax of the logits.
pub fn dm(logits: &Matrix, cls: &[usize]) -> Result<LossGrad, StrategyError> {
    check_single(logits, cls)?;
    let (n, k) = (logits.rows(), logits.cols());
    let mut dlogits = Matrix::zeros(n, k);
    let mut neg = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for (d, &z) in neg.iter_mut().zip(logits.row(i)) {
            *d = -z;
        }
        softmax_into(&mut q, &neg);
        let comp = cls[i];
        loss += -clamped_ln(q[comp]);
        if q[comp] > LOG_FLOOR {
            for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
                let delta = if j == comp { 1.0 } else { 0.0 };
                *out = (delta - q[j]) * inv_n;
            }
        }
    }
    Ok(LossGrad { loss: loss * inv_n, dlogits, d_trainable: None })
}

/// MCL losses over `s = sum of probability outside the complementary set`:
/// MAE is `1 - s`, EXP is `exp(-s)`, LOG is `-log s`.
pub fn mcl(
    variant: MclVariant,
    logits: &Matrix,
    cl_sets: &[Vec<usize>],
) -> Result<LossGrad, StrategyError> {
    let (n, k) = (logits.rows(), logits.cols());
    if cl_sets.len() != n {
        return Err(StrategyError::ShapeMismatch(format!(
            "{} label sets for {} rows",
            cl_sets.len(),
            n
        )));
    }
    let mut dlogits = Matrix::zeros(n, k);
    let mut p = vec![0.0; k];
    let mut in_set = vec![false; k];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let set = &cl_sets[i];
        if set.len() >= k {
            return Err(StrategyError::FullSet { index: i });
        }
        for f in in_set.iter_mut() {
            *f = false;
        }
        for &c in set {
            if c >= k {
                return Err(StrategyError::LabelRange { index: i, label: c, k });
            }
            in_set[c] = true;
        }
        softmax_into(&mut p, logits.row(i));
        let mut s = 0.0;
        for j in 0..k {
            if !in_set[j] {
                s += p[j];
            }
        }
        // d s / d z_j = p_j * ([j not in set] - s)
        let chain = match variant {
            MclVariant::Mae => {
                loss += 1.0 - s;
                -1.0
            }
            MclVariant::Exp => {
                let e = (-s).exp();
                loss += e;
                -e
            }
            MclVariant::Log => {
                loss += -clamped_ln(s);
                if s > LOG_FLOOR {
                    -1.0 / s
                } else {
                    0.0
                }
            }
        };
        for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
            let outside = if in_set[j] { 0.0 } else { 1.0 };
            *out = chain * p[j] * (outside - s) * inv_n;
        }
    }
    Ok(LossGrad { loss: loss * inv_n, dlogits, d_trainable: None })
}

/// CPE loss: cross-entropy of the complementary label against
/// `q = M^t softmax(logits)` with M = I (identity), the given matrix (fixed),
/// or the realized trainable layer. The trainable variant also returns the
/// gradient through the row-softmax parameterization.
pub fn cpe_loss(
    variant: CpeVariant,
    logits: &Matrix,
    cls: &[usize],
    t_given: Option<&TransitionMatrix>,
    trainable: Option<&TrainableT>,
) -> Result<LossGrad, StrategyError> {
    check_single(logits, cls)?;
    match variant {
        CpeVariant::Identity => {
            composed_ce(logits, cls, None, None).map(|(loss, dlogits, _)| LossGrad {
                loss,
                dlogits,
                d_trainable: None,
            })
        }
        CpeVariant::Fixed => {
            let t = t_given.ok_or(StrategyError::MissingTransition(StrategyName::CpeF))?;
            composed_ce(logits, cls, Some(t.matrix()), None).map(|(loss, dlogits, _)| {
                LossGrad { loss, dlogits, d_trainable: None }
            })
        }
        CpeVariant::Trainable => {
            let layer =
                trainable.ok_or(StrategyError::MissingTransition(StrategyName::CpeT))?;
            let m = layer.realized();
            let (loss, dlogits, dm_raw) = composed_ce(logits, cls, Some(&m), Some(()))?;
            let dm_raw = dm_raw.expect("requested dM accumulation");
            // Chain through the row softmax: for each row j,
            // dTheta[j][c] = M[j][c] * (dM[j][c] - sum_b dM[j][b] * M[j][b]).
            let k = m.rows();
            let mut dtheta = Matrix::zeros(k, k);
            for j in 0..k {
                let g = dm_raw.row(j);
                let mrow = m.row(j);
                let dot: f64 = g.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
                for c in 0..k {
                    dtheta[(j, c)] = mrow[c] * (g[c] - dot);
                }
            }
            Ok(LossGrad { loss, dlogits, d_trainable: Some(dtheta) })
        }
    }
}

/// Shared core for FWD / CPE: mean `-log q_comp` with `q = M^t p` (M = I when
/// absent), gradients through the softmax, optionally accumulating dL/dM.
fn composed_ce(
    logits: &Matrix,
    cls: &[usize],
    m: Option<&Matrix>,
    want_dm: Option<()>,
) -> Result<(f64, Matrix, Option<Matrix>), StrategyError> {
    let (n, k) = (logits.rows(), logits.cols());
    if let Some(m) = m {
        if m.rows() != k || m.cols() != k {
            return Err(StrategyError::ShapeMismatch(format!(
                "transition layer is {}x{}, logits have {k} classes",
                m.rows(),
                m.cols()
            )));
        }
    }
    let mut dlogits = Matrix::zeros(n, k);
    let mut dm_acc = want_dm.map(|()| Matrix::zeros(k, k));
    let mut p = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        softmax_into(&mut p, logits.row(i));
        let comp = cls[i];
        let q = match m {
            None => p[comp],
            Some(m) => (0..k).map(|j| m[(j, comp)] * p[j]).sum(),
        };
        loss += -clamped_ln(q);
        if q <= LOG_FLOOR {
            continue;
        }
        // dL/dp_j = -M[j][comp] / q  (or -delta_{j,comp} / q without M).
        match m {
            None => {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = if j == comp { -1.0 / q } else { 0.0 };
                }
            }
            Some(m) => {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = -m[(j, comp)] / q;
                }
            }
        }
        let dot: f64 = p.iter().zip(&g).map(|(&a, &b)| a * b).sum();
        for (j, out) in dlogits.row_mut(i).iter_mut().enumerate() {
            *out = p[j] * (g[j] - dot) * inv_n;
        }
        if let Some(acc) = dm_acc.as_mut() {
            // dL/dM[j][comp] = -p_j / q.
            for j in 0..k {
                acc[(j, comp)] += -p[j] / q * inv_n;
            }
        }
    }
    Ok((loss * inv_n, dlogits, dm_acc))
}

/// Decode an ordinary label from a complementary probability estimate by
/// matching transition rows: argmax over classes y of
/// `sum_c d[y][c] * log(max(q[c], floor))`, ties toward the lowest index.
pub fn cpe_decode(q_bar: &[f64], decoder: &Matrix) -> usize {
    let k = q_bar.len();
    debug_assert_eq!(decoder.rows(), k);
    let logs: Vec<f64> = q_bar.iter().map(|&q| clamped_ln(q)).collect();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for y in 0..k {
        let score: f64 = decoder.row(y).iter().zip(&logs).map(|(&d, &l)| d * l).sum();
        if score > best_score {
            best_score = score;
            best = y;
        }
    }
    best
}

fn check_single(logits: &Matrix, cls: &[usize]) -> Result<(), StrategyError> {
    if cls.len() != logits.rows() {
        return Err(StrategyError::ShapeMismatch(format!(
            "{} labels for {} rows",
            cls.len(),
            logits.rows()
        )));
    }
    let k = logits.cols();
    for (index, &label) in cls.iter().enumerate() {
        if label >= k {
            return Err(StrategyError::LabelRange { index, label, k });
        }
    }
    Ok(())
}

/// A strategy instance bound to a class count and (when relevant) a supplied
/// transition matrix. Owns the trainable layer state for CPE-T.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub spec: StrategySpec,
    k: usize,
    /// The matrix handed to the strategy. T-agnostic URE variants hold the
    /// uniform matrix here.
    t: Option<TransitionMatrix>,
    /// Cached inverse for the URE family.
    t_inverse: Option<Matrix>,
    pub trainable: Option<TrainableT>,
}

impl Strategy {
    pub fn new(
        spec: StrategySpec,
        k: usize,
        t_given: Option<&TransitionMatrix>,
    ) -> Result<Strategy, StrategyError> {
        use StrategyName::*;
        if spec.name.is_t_aware() && t_given.is_none() {
            return Err(StrategyError::MissingTransition(spec.name));
        }
        let t = match spec.name {
            UreNn | UreGa => Some(TransitionMatrix::uniform(k)?),
            n if n.is_t_aware() => t_given.cloned(),
            _ => None,
        };
        let t_inverse = match spec.name {
            UreNn | UreGa | UreTnn | UreTga => {
                Some(t.as_ref().expect("URE strategies hold a matrix").invert()?)
            }
            _ => None,
        };
        let trainable = match spec.name {
            CpeT => Some(TrainableT::init_at(t.as_ref().expect("CPE-T needs a matrix"))),
            _ => None,
        };
        Ok(Strategy { spec, k, t, t_inverse, trainable })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// The matrix this strategy was handed (None for matrix-free strategies).
    pub fn transition(&self) -> Option<&TransitionMatrix> {
        self.t.as_ref()
    }

    /// Evaluate the loss and gradients on one batch.
    pub fn batch_loss(
        &self,
        logits: &Matrix,
        cl_sets: &[Vec<usize>],
    ) -> Result<LossGrad, StrategyError> {
        use StrategyName::*;
        if self.spec.name.accepts_multi() {
            let variant = match self.spec.name {
                MclMae => MclVariant::Mae,
                MclExp => MclVariant::Exp,
                _ => MclVariant::Log,
            };
            return mcl(variant, logits, cl_sets);
        }
        let cls = singles(self.spec.name, cl_sets)?;
        match self.spec.name {
            Pc => pc(logits, &cls),
            SclNl => scl(SclVariant::Nl, logits, &cls),
            SclExp => scl(SclVariant::Exp, logits, &cls),
            Dm => dm(logits, &cls),
            Fwd => fwd(logits, &cls, self.t.as_ref().unwrap()),
            UreNn | UreTnn => ure_with_inverse(
                UreCorrection::NonNegative,
                logits,
                &cls,
                self.t_inverse.as_ref().unwrap(),
                self.spec.ure_base,
            ),
            UreGa | UreTga => ure_with_inverse(
                UreCorrection::GradientAscent,
                logits,
                &cls,
                self.t_inverse.as_ref().unwrap(),
                self.spec.ure_base,
            ),
            CpeI => cpe_loss(CpeVariant::Identity, logits, &cls, self.t.as_ref(), None),
            CpeF => cpe_loss(CpeVariant::Fixed, logits, &cls, self.t.as_ref(), None),
            CpeT => cpe_loss(
                CpeVariant::Trainable,
                logits,
                &cls,
                self.t.as_ref(),
                self.trainable.as_ref(),
            ),
            MclMae | MclExp | MclLog => unreachable!("handled above"),
        }
    }

    /// Predict ordinary labels from logits. CPE strategies compose their
    /// complementary probability estimate `q = M^t softmax(logits)` and
    /// decode it against the transition rows; everything else takes the
    /// argmax.
    pub fn predict(&self, logits: &Matrix) -> Vec<usize> {
        use StrategyName::*;
        match self.spec.name {
            CpeI | CpeF | CpeT => {
                let decoder = self.decoder_matrix().expect("CPE strategies carry a decoder");
                // The composition layer: I for CPE-I (q is the model output),
                // the supplied matrix for CPE-F, the realized layer for CPE-T.
                let compose: Option<Matrix> = match self.spec.name {
                    CpeI => None,
                    CpeF => Some(self.t.as_ref().unwrap().matrix().clone()),
                    _ => Some(self.trainable.as_ref().unwrap().realized()),
                };
                let k = logits.cols();
                let mut p = vec![0.0; k];
                let mut q = vec![0.0; k];
                (0..logits.rows())
                    .map(|i| {
                        softmax_into(&mut p, logits.row(i));
                        match &compose {
                            None => cpe_decode(&p, &decoder),
                            Some(m) => {
                                for (c, qc) in q.iter_mut().enumerate() {
                                    *qc = (0..k).map(|j| m[(j, c)] * p[j]).sum();
                                }
                                cpe_decode(&q, &decoder)
                            }
                        }
                    })
                    .collect()
            }
            _ => crate::model::argmax_rows(logits),
        }
    }

    /// The matrix used to decode predictions: the supplied one for CPE-I and
    /// CPE-F, the currently realized trainable layer for CPE-T.
    pub fn decoder_matrix(&self) -> Option<Matrix> {
        use StrategyName::*;
        match self.spec.name {
            CpeI | CpeF => self.t.as_ref().map(|t| t.matrix().clone()),
            CpeT => self.trainable.as_ref().map(|l| l.realized()),
            _ => None,
        }
    }
}

fn singles(name: StrategyName, cl_sets: &[Vec<usize>]) -> Result<Vec<usize>, StrategyError> {
    let mut out = Vec::with_capacity(cl_sets.len());
    for set in cl_sets {
        if set.len() != 1 {
            return Err(StrategyError::MultiClUnsupported(name));
        }
        out.push(set[0]);
    }
    Ok(out)
}
