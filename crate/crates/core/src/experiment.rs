//! Trial and benchmark runner: wires data loading, label generation,
//! transition-matrix provisioning, training, model selection, and evaluation
//! into one deterministic pipeline.
//!
//! All randomness in a trial derives from the trial seed through fixed-id
//! sub-streams (split, matrix construction, label generation, init, one
//! shuffle stream per epoch), so a rerun with the same config and seed is
//! bit-identical, and trials never share random state.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataio::{self, LabeledDataset, SplitSpec};
use crate::labelgen::{self, ComplementaryDataset};
use crate::metrics::{self, EpochRecord, RankTable, TrialResult};
use crate::model::{AdamState, Arch, ByteReader, MlpModel, ModelError};
use crate::numeric::{Matrix, PrngStream};
use crate::strategies::{Strategy, StrategyName, StrategySpec};
use crate::transition::{BiasTriplet, Smoothing, TransitionMatrix};
use crate::Error;

/// The learning-rate grid used by the benchmark protocol. Other values are
/// rejected unless the config opts out with `lr_free`.
pub const LR_GRID: [f64; 5] = [1e-3, 5e-4, 1e-4, 5e-5, 1e-5];

pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;
pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];

// Sub-stream ids, fixed forever: changing any of these changes every result.
const STAGE_SPLIT: u64 = 1;
const STAGE_MATRIX: u64 = 2;
const STAGE_GEN_TRAIN: u64 = 3;
const STAGE_GEN_VAL: u64 = 4;
const STAGE_DECOMPOSE: u64 = 5;
const STAGE_INIT: u64 = 6;
const STAGE_SHUFFLE_BASE: u64 = 0x1000;

/// Seed used to carve a test split out of datasets that arrive without one.
/// Constant on purpose: every trial of an experiment must see the same test
/// set regardless of its trial seed.
const TEST_CARVE_SEED: u64 = 0x7e57;

/// An error annotated with the pipeline stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("trial stage '{stage}': {source}")]
pub struct TrialError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

fn at<T, E: Into<Error>>(stage: &'static str, r: Result<T, E>) -> Result<T, TrialError> {
    r.map_err(|e| TrialError { stage, source: e.into() })
}

/// Where the training data comes from.
#[derive(Debug, Clone)]
pub enum DatasetSpec {
    /// Gaussian blobs; train pool and test set are generated from
    /// `data_seed`, independent of the trial seed.
    Synth {
        k: usize,
        d: usize,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
        data_seed: u64,
    },
    /// Feature CSV with a final integer label column. Without a test file, a
    /// fixed fraction is carved off deterministically.
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
        k_override: Option<usize>,
        test_fraction: f64,
    },
    /// IDX image/label pairs (MNIST family).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Pre-labeled complementary data; implies `Assumption::Preassigned`.
    /// The test set comes from a labeled CSV, or is carved from the file's
    /// ordinary labels when present.
    ClFile { train: PathBuf, test_csv: Option<PathBuf>, test_fraction: f64 },
}

impl DatasetSpec {
    pub fn default_name(&self) -> String {
        match self {
            DatasetSpec::Synth { k, d, .. } => format!("synth-k{k}-d{d}"),
            DatasetSpec::Csv { train, .. } | DatasetSpec::ClFile { train, .. } => train
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            DatasetSpec::Idx { train_images, .. } => train_images
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "idx".into()),
        }
    }
}

/// How complementary labels are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assumption {
    Uniform,
    BiasedWeak,
    BiasedStrong,
    /// Labels drawn from `(1-lambda) * T_strong + lambda * (1/K) * ones`;
    /// the strategy still receives `T_strong` only.
    Noisy { lambda: f64 },
    /// `m` labels per instance, uniform without replacement.
    Multi { m: usize },
    /// Labels come with the dataset file.
    Preassigned,
}

impl Assumption {
    pub fn as_str(&self) -> &'static str {
        match self {
            Assumption::Uniform => "uniform",
            Assumption::BiasedWeak => "biased-weak",
            Assumption::BiasedStrong => "biased-strong",
            Assumption::Noisy { .. } => "noisy",
            Assumption::Multi { .. } => "multi",
            Assumption::Preassigned => "preassigned",
        }
    }
}

/// Where the transition matrix handed to the strategy comes from.
#[derive(Debug, Clone)]
pub enum TProvision {
    /// The exact matrix behind the generation assumption (for noisy data,
    /// the underlying strong-bias matrix; for multi, uniform). Preassigned
    /// data falls back to empirical estimation from its ordinary labels.
    True,
    /// Counted from the (ordinary, complementary) pairs of the training set.
    EstimateFromPairs,
    FromFile(PathBuf),
}

/// What the validation set carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValMode {
    /// Ordinary labels retained; enables accuracy selection.
    Ordinary,
    /// Stripped to single complementary labels; selection must use SCEL/URE.
    Complementary,
}

/// Model-selection metric. Accuracy is maximized; SCEL and URE are minimized.
/// Ties keep the earlier epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMetric {
    Acc,
    Scel,
    Ure,
}

impl SelectMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectMetric::Acc => "acc",
            SelectMetric::Scel => "scel",
            SelectMetric::Ure => "ure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Name used in logs and tables; defaults to the dataset's own.
    pub dataset_name: Option<String>,
    pub assumption: Assumption,
    pub strategy: StrategySpec,
    pub t_provision: TProvision,
    pub arch: Arch,
    pub lr: f64,
    /// Allow learning rates outside [`LR_GRID`].
    pub lr_free: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub val_mode: ValMode,
    pub select: SelectMetric,
    /// Standardize features with train statistics before training.
    pub standardize: bool,
    /// When set, the trial writes a result log and a checkpoint here.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, assumption: Assumption, strategy: StrategyName) -> Self {
        ExperimentConfig {
            dataset,
            dataset_name: None,
            assumption,
            strategy: StrategySpec::new(strategy),
            t_provision: TProvision::True,
            arch: Arch::mlp(),
            lr: 1e-4,
            lr_free: false,
            batch_size: DEFAULT_BATCH,
            epochs: DEFAULT_EPOCHS,
            val_fraction: DEFAULT_VAL_FRACTION,
            val_mode: ValMode::Ordinary,
            select: SelectMetric::Acc,
            standardize: false,
            out_dir: None,
        }
    }

    pub fn name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| self.dataset.default_name())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.lr_free && !LR_GRID.contains(&self.lr) {
            return Err(Error::Config(format!(
                "lr {} is not in the grid {:?}; pass lr_free to override",
                self.lr, LR_GRID
            )));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0,1), got {}",
                self.val_fraction
            )));
        }
        if let Assumption::Noisy { lambda } = self.assumption {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Config(format!("lambda must lie in [0,1], got {lambda}")));
            }
        }
        if let Assumption::Multi { m } = self.assumption {
            if m == 0 {
                return Err(Error::Config("multi assumption needs m >= 1".into()));
            }
        }
        match (self.val_mode, self.select) {
            (ValMode::Ordinary, SelectMetric::Acc) => {}
            (ValMode::Complementary, SelectMetric::Scel | SelectMetric::Ure) => {}
            (mode, select) => {
                return Err(Error::Config(format!(
                    "selection metric '{}' is incompatible with {:?} validation labels",
                    select.as_str(),
                    mode
                )));
            }
        }
        if matches!(self.dataset, DatasetSpec::ClFile { .. })
            != matches!(self.assumption, Assumption::Preassigned)
        {
            return Err(Error::Config(
                "CL-file datasets require the preassigned assumption, and vice versa".into(),
            ));
        }
        Ok(())
    }
}

/// Validation data in the mode requested by the config.
#[derive(Debug, Clone)]
pub enum ValData {
    Ordinary(LabeledDataset),
    Complementary(ComplementaryDataset),
}

/// Everything a trial needs after data preparation; exposed so tests can
/// inspect protocol fidelity (e.g. which matrix the strategy was handed).
#[derive(Debug)]
pub struct PreparedTrial {
    pub name: String,
    pub k: usize,
    /// Training data after any decomposition, ready for the strategy.
    pub train: ComplementaryDataset,
    pub val: ValData,
    pub test: LabeledDataset,
    /// The matrix complementary labels were actually drawn from (None for
    /// multi-label generation and preassigned data).
    pub generation_matrix: Option<TransitionMatrix>,
    /// The matrix provisioned to the strategy and validation metrics, when
    /// one was needed or derivable.
    pub provisioned_matrix: Option<TransitionMatrix>,
    pub strategy: Strategy,
}

fn stage_seed(trial_seed: u64, stage: u64) -> u64 {
    PrngStream::new(trial_seed).substream(stage).seed()
}

fn load_source(
    spec: &DatasetSpec,
) -> Result<(Option<LabeledDataset>, Option<ComplementaryDataset>, LabeledDataset), Error> {
    match spec {
        DatasetSpec::Synth { k, d, per_class, test_per_class, separation, data_seed } => {
            let pool = dataio::synth_gaussians(*k, *per_class, *d, *separation, *data_seed);
            let test = dataio::synth_gaussians(
                *k,
                *test_per_class,
                *d,
                *separation,
                data_seed.wrapping_add(1),
            );
            Ok((Some(pool), None, test))
        }
        DatasetSpec::Csv { train, test, k_override, test_fraction } => {
            let pool = dataio::load_features_csv(train, true, *k_override)?;
            match test {
                Some(path) => {
                    let test = dataio::load_features_csv(path, true, Some(pool.k))?;
                    Ok((Some(pool), None, test))
                }
                None => {
                    let spec = SplitSpec::new(*test_fraction, TEST_CARVE_SEED)?;
                    let (pool, test) = dataio::split_train_val(&pool, spec)?;
                    Ok((Some(pool), None, test))
                }
            }
        }
        DatasetSpec::Idx { train_images, train_labels, test_images, test_labels } => {
            let pool = dataio::load_idx(train_images, train_labels)?;
            let test = dataio::load_idx(test_images, test_labels)?;
            if test.k > pool.k || test.dim() != pool.dim() {
                return Err(Error::Config(
                    "train and test IDX files do not describe the same problem".into(),
                ));
            }
            Ok((Some(pool), None, test))
        }
        DatasetSpec::ClFile { train, test_csv, test_fraction } => {
            let pool = dataio::load_cl_dataset(train)?;
            match test_csv {
                Some(path) => {
                    let test = dataio::load_features_csv(path, true, Some(pool.k))?;
                    Ok((None, Some(pool), test))
                }
                None => {
                    let labels = pool.true_labels.clone().ok_or_else(|| {
                        Error::Config(
                            "cannot carve a test set: CL file has no ordinary labels and no \
                             test CSV was given"
                                .into(),
                        )
                    })?;
                    let (keep_idx, test_idx) = dataio::split_indices(
                        pool.len(),
                        *test_fraction,
                        TEST_CARVE_SEED,
                    )?;
                    let test = LabeledDataset::new(
                        pool.features.select_rows(&test_idx),
                        test_idx.iter().map(|&i| labels[i]).collect(),
                        pool.k,
                        "clfile-test",
                    )?;
                    let kept = select_cl_rows(&pool, &keep_idx);
                    Ok((None, Some(kept), test))
                }
            }
        }
    }
}

fn select_cl_rows(ds: &ComplementaryDataset, indices: &[usize]) -> ComplementaryDataset {
    ComplementaryDataset {
        features: ds.features.select_rows(indices),
        cl_sets: indices.iter().map(|&i| ds.cl_sets[i].clone()).collect(),
        true_labels: ds
            .true_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect()),
        k: ds.k,
    }
}

/// Expand a complementary dataset into (ordinary, complementary) pairs for
/// empirical matrix estimation.
fn pairs_of(ds: &ComplementaryDataset) -> Result<Vec<(usize, usize)>, Error> {
    let labels = ds
        .true_labels
        .as_ref()
        .ok_or_else(|| Error::Config("empirical estimation needs ordinary labels".into()))?;
    let mut pairs = Vec::new();
    for (i, set) in ds.cl_sets.iter().enumerate() {
        for &c in set {
            pairs.push((labels[i], c));
        }
    }
    Ok(pairs)
}

/// Run data preparation for one trial: load, split, generate labels, build
/// the matrices, and bind the strategy.
pub fn prepare_trial(config: &ExperimentConfig, seed: u64) -> Result<PreparedTrial, TrialError> {
    at("config", config.validate())?;
    let name = config.name();

    let (pool, preassigned, mut test) = at("load", load_source(&config.dataset))?;

    // Split into train/val, generating complementary labels where needed.
    let split = at(
        "split",
        SplitSpec::new(config.val_fraction, stage_seed(seed, STAGE_SPLIT)).map_err(Error::from),
    )?;

    let (mut train_cl, val, k, generation_matrix) = match (&config.assumption, pool, preassigned)
    {
        (Assumption::Preassigned, _, Some(cl_pool)) => {
            let (train_idx, val_idx) =
                at("split", dataio::split_indices(cl_pool.len(), split.validation_fraction, split.seed))?;
            let train_cl = select_cl_rows(&cl_pool, &train_idx);
            let val_cl = select_cl_rows(&cl_pool, &val_idx);
            let k = cl_pool.k;
            let val = match config.val_mode {
                ValMode::Ordinary => {
                    let labels = val_cl.true_labels.clone().ok_or_else(|| TrialError {
                        stage: "split",
                        source: Error::Config(
                            "ordinary validation needs ordinary labels in the CL file".into(),
                        ),
                    })?;
                    ValData::Ordinary(
                        at(
                            "split",
                            LabeledDataset::new(val_cl.features.clone(), labels, k, "val"),
                        )?,
                    )
                }
                ValMode::Complementary => {
                    let mut stripped = val_cl;
                    stripped.true_labels = None;
                    ValData::Complementary(stripped)
                }
            };
            (train_cl, val, k, None)
        }
        (assumption, Some(pool), _) => {
            let k = pool.k;
            let (train, val_ds) = at("split", dataio::split_train_val(&pool, split))?;

            // Build the generation matrix for this assumption.
            let mut matrix_rng = PrngStream::new(stage_seed(seed, STAGE_MATRIX));
            let generation_matrix = at(
                "matrix",
                match assumption {
                    Assumption::Uniform => TransitionMatrix::uniform(k).map(Some),
                    Assumption::BiasedWeak => {
                        TransitionMatrix::biased(k, BiasTriplet::weak(), &mut matrix_rng)
                            .map(Some)
                    }
                    Assumption::BiasedStrong => {
                        TransitionMatrix::biased(k, BiasTriplet::strong(), &mut matrix_rng)
                            .map(Some)
                    }
                    Assumption::Noisy { lambda } => {
                        TransitionMatrix::biased(k, BiasTriplet::strong(), &mut matrix_rng)
                            .and_then(|strong| TransitionMatrix::noisy(&strong, *lambda))
                            .map(Some)
                    }
                    Assumption::Multi { .. } => Ok(None),
                    Assumption::Preassigned => unreachable!("handled above"),
                },
            )?;

            // Generate training labels.
            let mut gen_rng = PrngStream::new(stage_seed(seed, STAGE_GEN_TRAIN));
            let cl_sets = at(
                "generate",
                match assumption {
                    Assumption::Multi { m } => {
                        labelgen::generate_multi(&train.labels, *m, k, &mut gen_rng)
                    }
                    _ => labelgen::generate_single(
                        &train.labels,
                        generation_matrix.as_ref().expect("single-label assumptions build a matrix"),
                        &mut gen_rng,
                    )
                    .map(|cls| cls.into_iter().map(|c| vec![c]).collect()),
                },
            )?;
            let train_cl = at(
                "generate",
                ComplementaryDataset::new(
                    train.features.clone(),
                    cl_sets,
                    Some(train.labels.clone()),
                    k,
                ),
            )?;

            let val = match config.val_mode {
                ValMode::Ordinary => ValData::Ordinary(val_ds),
                ValMode::Complementary => {
                    // Validation always carries single labels (the URE/SCEL
                    // metrics are defined on one label per instance); under
                    // the multi assumption they are drawn uniformly.
                    let mut val_rng = PrngStream::new(stage_seed(seed, STAGE_GEN_VAL));
                    let single_t = match &generation_matrix {
                        Some(t) => t.clone(),
                        None => at("generate", TransitionMatrix::uniform(k))?,
                    };
                    let cls = at(
                        "generate",
                        labelgen::generate_single(&val_ds.labels, &single_t, &mut val_rng),
                    )?;
                    ValData::Complementary(at(
                        "generate",
                        ComplementaryDataset::new(
                            val_ds.features.clone(),
                            cls.into_iter().map(|c| vec![c]).collect(),
                            None,
                            k,
                        ),
                    )?)
                }
            };
            (train_cl, val, k, generation_matrix)
        }
        _ => {
            return Err(TrialError {
                stage: "load",
                source: Error::Config("dataset source does not match the assumption".into()),
            })
        }
    };

    // The matrix handed to the strategy (and to CL-only validation metrics).
    let needs_matrix = config.strategy.name.is_t_aware()
        || config.select != SelectMetric::Acc;
    let provisioned_matrix = at(
        "matrix",
        match &config.t_provision {
            TProvision::True => match &config.assumption {
                Assumption::Uniform | Assumption::Multi { .. } => {
                    TransitionMatrix::uniform(k).map(Some).map_err(Error::from)
                }
                Assumption::BiasedWeak | Assumption::BiasedStrong => {
                    Ok(generation_matrix.clone())
                }
                Assumption::Noisy { .. } => {
                    // Rebuild the strong matrix from the same stream the
                    // noisy interpolation consumed: the learner sees the
                    // strong deviation only, never the noise.
                    let mut matrix_rng = PrngStream::new(stage_seed(seed, STAGE_MATRIX));
                    TransitionMatrix::biased(k, BiasTriplet::strong(), &mut matrix_rng)
                        .map(Some)
                        .map_err(Error::from)
                }
                Assumption::Preassigned => {
                    if needs_matrix {
                        pairs_of(&train_cl).and_then(|pairs| {
                            TransitionMatrix::from_pairs(&pairs, k, Smoothing::None)
                                .map(Some)
                                .map_err(Error::from)
                        })
                    } else {
                        Ok(None)
                    }
                }
            },
            TProvision::EstimateFromPairs => pairs_of(&train_cl).and_then(|pairs| {
                TransitionMatrix::from_pairs(&pairs, k, Smoothing::None)
                    .map(Some)
                    .map_err(Error::from)
            }),
            TProvision::FromFile(path) => {
                TransitionMatrix::load(path).map(Some).map_err(Error::from)
            }
        },
    )?;
    if needs_matrix && provisioned_matrix.is_none() {
        return Err(TrialError {
            stage: "matrix",
            source: Error::Config(format!(
                "strategy {} or selection metric '{}' needs a transition matrix",
                config.strategy.name,
                config.select.as_str()
            )),
        });
    }

    let strategy = at(
        "matrix",
        Strategy::new(config.strategy, k, provisioned_matrix.as_ref()),
    )?;

    // Single-label strategies get decomposed, shuffled data; MCL keeps the
    // intact sets.
    if !config.strategy.name.accepts_multi() && !train_cl.is_single() {
        let mut rng = PrngStream::new(stage_seed(seed, STAGE_DECOMPOSE));
        train_cl = labelgen::decompose_multi(&train_cl, &mut rng);
    }

    // Optional standardization with train statistics.
    let mut val = val;
    if config.standardize {
        let as_labeled = LabeledDataset::new(
            train_cl.features.clone(),
            vec![0; train_cl.len()],
            1.max(k),
            "train",
        );
        let train_ref = at("standardize", as_labeled)?;
        let standardizer = dataio::Standardizer::fit(&train_ref);
        standardizer.apply_matrix(&mut train_cl.features);
        match &mut val {
            ValData::Ordinary(ds) => standardizer.apply_matrix(&mut ds.features),
            ValData::Complementary(ds) => standardizer.apply_matrix(&mut ds.features),
        }
        standardizer.apply_matrix(&mut test.features);
    }

    Ok(PreparedTrial {
        name,
        k,
        train: train_cl,
        val,
        test,
        generation_matrix,
        provisioned_matrix,
        strategy,
    })
}

#[derive(Serialize)]
struct EpochLine<'a> {
    dataset: &'a str,
    strategy: &'a str,
    seed: u64,
    epoch: usize,
    train_loss: f64,
    val_metric: f64,
    val_metric_name: &'a str,
}

#[derive(Serialize)]
struct FinalLine<'a> {
    dataset: &'a str,
    strategy: &'a str,
    seed: u64,
    selected_epoch: usize,
    test_acc: f64,
    lr: f64,
}

/// Run one (config, seed) trial end to end.
pub fn run_trial(config: &ExperimentConfig, seed: u64) -> Result<TrialResult, TrialError> {
    let prepared = prepare_trial(config, seed)?;
    let (result, best_model, decoder) = train_prepared(config, seed, &prepared)?;

    if let Some(dir) = &config.out_dir {
        at("write", std::fs::create_dir_all(dir).map_err(Error::from_io))?;
        let base = format!(
            "{}_{}_seed{}",
            sanitize(&result.dataset),
            sanitize(&result.strategy),
            seed
        );
        let log_path = dir.join(format!("{base}.log"));
        at("write", write_log(&log_path, &result).map_err(Error::from_io))?;
        let ckpt_path = dir.join(format!("{base}.ckpt"));
        at(
            "write",
            save_checkpoint(&ckpt_path, &best_model, &result.strategy, decoder.as_ref())
                .map_err(Error::from),
        )?;
    }
    Ok(result)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

impl Error {
    fn from_io(e: std::io::Error) -> Error {
        Error::Data(crate::dataio::DataError::Io(e))
    }
}

fn write_log(path: &Path, result: &TrialResult) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for rec in &result.epochs {
        let line = EpochLine {
            dataset: &result.dataset,
            strategy: &result.strategy,
            seed: result.seed,
            epoch: rec.epoch,
            train_loss: rec.train_loss,
            val_metric: rec.val_metric,
            val_metric_name: &result.val_metric_name,
        };
        out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
        out.push('\n');
    }
    let final_line = FinalLine {
        dataset: &result.dataset,
        strategy: &result.strategy,
        seed: result.seed,
        selected_epoch: result.selected_epoch,
        test_acc: result.test_accuracy,
        lr: result.lr,
    };
    out.push_str(&serde_json::to_string(&final_line).expect("log lines serialize"));
    out.push('\n');
    std::fs::write(path, out)
}

/// The training loop proper. Returns the trial result plus the selected
/// model and (for CPE strategies) the decoder matrix snapshot that goes into
/// the checkpoint.
pub fn train_prepared(
    config: &ExperimentConfig,
    seed: u64,
    prepared: &PreparedTrial,
) -> Result<(TrialResult, MlpModel, Option<Matrix>), TrialError> {
    let k = prepared.k;
    let d = prepared.train.features.cols();
    let n = prepared.train.len();

    let mut model = MlpModel::init(config.arch, d, k, stage_seed(seed, STAGE_INIT));
    let mut strategy = prepared.strategy.clone();
    let mut sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if let Some(layer) = &strategy.trainable {
        sizes.push(layer.params_flat().len());
    }
    let mut adam = AdamState::new(&sizes, config.lr);

    let trial_stream = PrngStream::new(seed);
    let t_val = prepared.provisioned_matrix.as_ref();
    let t_val_inverse = match (config.select, t_val) {
        (SelectMetric::Ure, Some(t)) => Some(at("matrix", t.invert())?),
        _ => None,
    };

    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpModel, Option<crate::strategies::TrainableT>)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        trial_stream
            .substream(STAGE_SHUFFLE_BASE + epoch as u64)
            .shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = prepared.train.features.select_rows(batch);
            let sets: Vec<Vec<usize>> =
                batch.iter().map(|&i| prepared.train.cl_sets[i].clone()).collect();
            let (logits, cache) = at("train", model.forward(&x))?;
            let lossgrad = at("train", strategy.batch_loss(&logits, &sets))?;
            let grads = at("train", model.backward(&x, &cache, &lossgrad.dlogits))?;

            let mut grad_refs: Vec<&[f64]> =
                grads.tensors.iter().map(|t| t.as_slice()).collect();
            if let Some(dm) = &lossgrad.d_trainable {
                grad_refs.push(dm.data());
            }
            let mut params = model.params_mut();
            if let Some(layer) = strategy.trainable.as_mut() {
                params.push(layer.params_flat_mut());
            }
            at("train", adam.step(&mut params, &grad_refs))?;

            loss_sum += lossgrad.loss * batch.len() as f64;
        }
        let train_loss = loss_sum / n as f64;

        let val_metric = at(
            "validate",
            validation_metric(&model, &strategy, &prepared.val, t_val, t_val_inverse.as_ref(), config.select),
        )?;
        records.push(EpochRecord { epoch, train_loss, val_metric });

        let improved = match &best {
            None => true,
            Some((best_metric, _, _, _)) => match config.select {
                SelectMetric::Acc => val_metric > *best_metric,
                SelectMetric::Scel | SelectMetric::Ure => val_metric < *best_metric,
            },
        };
        if improved {
            best = Some((val_metric, epoch, model.clone(), strategy.trainable.clone()));
        }
    }

    let (_, selected_epoch, best_model, best_trainable) =
        best.expect("at least one epoch ran");
    let mut eval_strategy = strategy.clone();
    eval_strategy.trainable = best_trainable;

    let (test_logits, _) = at("evaluate", best_model.forward(&prepared.test.features))?;
    let preds = eval_strategy.predict(&test_logits);
    let test_accuracy = at("evaluate", metrics::accuracy(&preds, &prepared.test.labels))?;

    let result = TrialResult {
        dataset: prepared.name.clone(),
        strategy: config.strategy.name.as_str().to_string(),
        seed,
        lr: config.lr,
        val_metric_name: config.select.as_str().to_string(),
        epochs: records,
        selected_epoch,
        test_accuracy,
    };
    Ok((result, best_model, eval_strategy.decoder_matrix()))
}

fn validation_metric(
    model: &MlpModel,
    strategy: &Strategy,
    val: &ValData,
    t_val: Option<&TransitionMatrix>,
    t_val_inverse: Option<&Matrix>,
    select: SelectMetric,
) -> Result<f64, Error> {
    match (select, val) {
        (SelectMetric::Acc, ValData::Ordinary(ds)) => {
            let (logits, _) = model.forward(&ds.features)?;
            let preds = strategy.predict(&logits);
            Ok(metrics::accuracy(&preds, &ds.labels)?)
        }
        (SelectMetric::Scel, ValData::Complementary(ds)) => {
            let t = t_val.ok_or_else(|| Error::Config("SCEL needs a matrix".into()))?;
            let (logits, _) = model.forward(&ds.features)?;
            Ok(metrics::scel_from_logits(&logits, ds, t)?)
        }
        (SelectMetric::Ure, ValData::Complementary(ds)) => {
            let tinv =
                t_val_inverse.ok_or_else(|| Error::Config("URE needs a matrix".into()))?;
            let (logits, _) = model.forward(&ds.features)?;
            let preds = strategy.predict(&logits);
            Ok(metrics::ure_validation_from_preds(&preds, ds, tinv)?)
        }
        _ => Err(Error::Config(
            "validation data mode does not match the selection metric".into(),
        )),
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"CLLTRIA1";

/// Write the selected model (plus the decoder matrix for CPE strategies) as
/// one self-contained binary file.
pub fn save_checkpoint(
    path: &Path,
    model: &MlpModel,
    strategy: &str,
    decoder: Option<&Matrix>,
) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let name = strategy.as_bytes();
    buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
    buf.extend_from_slice(name);
    let model_bytes = model.to_bytes();
    buf.extend_from_slice(&(model_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&model_bytes);
    match decoder {
        None => buf.push(0),
        Some(m) => {
            buf.push(1);
            buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            for &v in m.data() {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(MlpModel, String, Option<Matrix>), ModelError> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(ModelError::Corrupt("bad checkpoint magic".into()));
    }
    let name_len = r.u64()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| ModelError::Corrupt("strategy name is not UTF-8".into()))?;
    let model_len = r.u64()? as usize;
    let model = MlpModel::from_bytes(r.take(model_len)?)?;
    let decoder = match r.take(1)?[0] {
        0 => None,
        1 => {
            let k = r.u64()? as usize;
            let mut m = Matrix::zeros(k, k);
            for v in m.data_mut() {
                *v = r.f64()?;
            }
            Some(m)
        }
        other => return Err(ModelError::Corrupt(format!("bad decoder flag {other}"))),
    };
    if !r.at_end() {
        return Err(ModelError::Corrupt("trailing bytes".into()));
    }
    Ok((model, name, decoder))
}

/// A dataset-by-strategy benchmark grid sharing one experiment template.
#[derive(Debug, Clone)]
pub struct BenchmarkGrid {
    pub datasets: Vec<(String, DatasetSpec)>,
    pub strategies: Vec<StrategyName>,
    /// Template for everything except dataset and strategy.
    pub template: ExperimentConfig,
    pub seeds: Vec<u64>,
}

/// Run every (dataset, strategy, seed) cell and assemble the rank table,
/// T-agnostic strategies above, T-aware below. Any failed trial aborts the
/// benchmark; there are no silent gaps.
pub fn run_benchmark(grid: &BenchmarkGrid) -> Result<(RankTable, Vec<TrialResult>), TrialError> {
    // Fixed table order regardless of the order given.
    let mut strategies: Vec<StrategyName> = StrategyName::ALL
        .iter()
        .copied()
        .filter(|n| grid.strategies.contains(n))
        .collect();
    if strategies.is_empty() {
        strategies = grid.strategies.clone();
    }

    let mut results = Vec::new();
    for (name, spec) in &grid.datasets {
        for &strategy in &strategies {
            for &seed in &grid.seeds {
                let mut config = grid.template.clone();
                config.dataset = spec.clone();
                config.dataset_name = Some(name.clone());
                let mut strat_spec = StrategySpec::new(strategy);
                strat_spec.ure_base = grid.template.strategy.ure_base;
                config.strategy = strat_spec;
                results.push(run_trial(&config, seed)?);
            }
        }
    }

    let stats = metrics::aggregate_trials(&results);
    let strategy_names: Vec<String> =
        strategies.iter().map(|s| s.as_str().to_string()).collect();
    let dataset_names: Vec<String> = grid.datasets.iter().map(|(n, _)| n.clone()).collect();
    let table = at(
        "aggregate",
        metrics::average_rank(&strategy_names, &dataset_names, &stats),
    )?;
    Ok((table, results))
}

/// Number of T-agnostic strategies at the top of `strategies`, for the table
/// separator.
pub fn agnostic_count(strategies: &[String]) -> usize {
    strategies
        .iter()
        .take_while(|s| {
            s.parse::<StrategyName>().map(|n| !n.is_t_aware()).unwrap_or(false)
        })
        .count()
}
