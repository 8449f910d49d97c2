//! Complementary-label learning (CLL) engine and benchmark harness.
//!
//! In CLL the training signal is a *complementary label*: a class an instance
//! is known **not** to belong to. This crate provides everything needed to run
//! reproducible CLL experiments end to end:
//!
//! - [`numeric`] — dense `f64` matrices, stable softmax / log-sum-exp, and a
//!   fixed, seedable PRNG so every run is bit-reproducible.
//! - [`transition`] — the row-stochastic K×K transition matrix `T` with
//!   `T[i][j] = P(comp = j | true = i)`: uniform / biased / noisy builders,
//!   empirical estimation from pairs, inversion, validation, and file I/O.
//! - [`labelgen`] — sampling single and multiple complementary labels from
//!   ordinary labels under a transition matrix, plus multi-label decomposition.
//! - [`dataio`] — CSV / IDX / CL-dataset ingestion, synthetic Gaussian data,
//!   train/validation splitting, and standardization.
//! - [`model`] — linear and one-hidden-layer MLP classifiers with exact
//!   backpropagation, Adam, and bit-exact checkpoints.
//! - [`strategies`] — the fifteen CLL strategy losses (PC, SCL, URE, FWD, DM,
//!   MCL, CPE families), each returning the scalar loss and exact `dL/dlogits`.
//! - [`metrics`] — accuracy, complementary-label-only validation metrics
//!   (URE, SCEL), trial aggregation, and average-rank tables.
//! - [`experiment`] — the trial/benchmark runner wiring all of the above into
//!   a deterministic pipeline.

pub mod dataio;
pub mod experiment;
pub mod labelgen;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod strategies;
pub mod transition;

pub use dataio::{LabeledDataset, SplitSpec};
pub use labelgen::ComplementaryDataset;
pub use model::{AdamState, Arch, MlpModel};
pub use numeric::{Matrix, PrngStream};
pub use strategies::{StrategyName, StrategySpec};
pub use transition::{BiasTriplet, TransitionKind, TransitionMatrix};

/// Umbrella error for pipeline code that crosses module boundaries.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] numeric::NumericError),
    #[error(transparent)]
    Transition(#[from] transition::TransitionError),
    #[error(transparent)]
    LabelGen(#[from] labelgen::LabelGenError),
    #[error(transparent)]
    Data(#[from] dataio::DataError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Strategy(#[from] strategies::StrategyError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{0}")]
    Config(String),
}
