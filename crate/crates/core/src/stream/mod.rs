//! Prequential stream harness.
//!
//! A labelled stream is split into a small initial segment used to train the
//! first model and an online remainder. Every online sample is scored by the
//! configured uncertainty estimator *before* its label is consulted
//! (test-then-train); the per-sample entropy can drive an adaptive-window
//! detector that triggers retraining on the initial segment plus the most
//! recent samples. Baseline (never retrain) and fixed-position retraining
//! variants share the same scoring path, so runs are comparable and
//! detection runs can be replayed exactly.

mod loader;
mod positions;
mod runner;
mod sweep;

pub use loader::{load_stream, LoadOptions};
pub use positions::{equal_positions, random_positions};
pub use runner::{
    run_baseline, run_detection, run_experiment, run_fixed_positions, ExperimentReport,
    RetrainingEvent, RunOutput,
};
pub use sweep::{sweep, SweepGrid, SweepRow};

use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, TrainOptions, TrainingSet};
use crate::tensor::Tensor2D;
use crate::uncertainty::AshConfig;

/// A fully materialised labelled stream in arrival order.
#[derive(Debug, Clone)]
pub struct DatasetStream {
    name: String,
    features: Tensor2D,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl DatasetStream {
    /// Validates sample/label agreement and label range. Class indices are
    /// dense: label `k` refers to `class_names[k]`.
    pub fn new(
        name: impl Into<String>,
        features: Tensor2D,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::input("a stream needs at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::input(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(DatasetStream {
            name: name.into(),
            features,
            labels,
            class_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }
}

/// Splits the stream into the initial training segment — the first
/// `floor(len * fraction)` samples — and the online remainder, in arrival
/// order. Both parts must be non-empty.
pub fn split_initial(stream: &DatasetStream, fraction: f64) -> Result<(TrainingSet, TrainingSet)> {
    if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
        return Err(Error::config(format!(
            "initial fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = stream.len();
    let head = (n as f64 * fraction).floor() as usize;
    if head == 0 || head >= n {
        return Err(Error::input(format!(
            "splitting {n} samples at fraction {fraction} leaves an empty part"
        )));
    }
    let dim = stream.num_features();
    let mut initial = Tensor2D::zeros(head, dim);
    let mut online = Tensor2D::zeros(n - head, dim);
    for i in 0..head {
        initial.row_mut(i).copy_from_slice(stream.features().row(i));
    }
    for i in head..n {
        online
            .row_mut(i - head)
            .copy_from_slice(stream.features().row(i));
    }
    Ok((
        TrainingSet::new(initial, stream.labels()[..head].to_vec())?,
        TrainingSet::new(online, stream.labels()[head..].to_vec())?,
    ))
}

/// The five uncertainty estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Basic,
    Mcd,
    Ensemble,
    Swag,
    Ash,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Basic => "basic",
            EstimatorKind::Mcd => "mcd",
            EstimatorKind::Ensemble => "ensemble",
            EstimatorKind::Swag => "swag",
            EstimatorKind::Ash => "ash",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(EstimatorKind::Basic),
            "mcd" => Ok(EstimatorKind::Mcd),
            "ensemble" => Ok(EstimatorKind::Ensemble),
            "swag" => Ok(EstimatorKind::Swag),
            "ash" => Ok(EstimatorKind::Ash),
            other => Err(Error::config(format!(
                "unknown estimator {other:?}; expected basic, mcd, ensemble, swag, or ash"
            ))),
        }
    }

    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Basic,
        EstimatorKind::Mcd,
        EstimatorKind::Ensemble,
        EstimatorKind::Swag,
        EstimatorKind::Ash,
    ];
}

/// Estimator choice plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorConfig {
    /// Single deterministic softmax pass.
    Basic,
    /// Monte Carlo dropout with `passes` stochastic forward passes.
    Mcd { passes: usize },
    /// Deep ensemble of `members` networks differing only in training seed.
    Ensemble { members: usize },
    /// Posterior-weight sampling: `samples` weight draws from a posterior
    /// with at most `rank` deviation columns.
    Swag { samples: usize, rank: usize },
    /// Activation shaping at inference time.
    Ash {
        pruning_percent: f64,
        layer_offset: usize,
    },
}

impl EstimatorConfig {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorConfig::Basic => EstimatorKind::Basic,
            EstimatorConfig::Mcd { .. } => EstimatorKind::Mcd,
            EstimatorConfig::Ensemble { .. } => EstimatorKind::Ensemble,
            EstimatorConfig::Swag { .. } => EstimatorKind::Swag,
            EstimatorConfig::Ash { .. } => EstimatorKind::Ash,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EstimatorConfig::Basic => Ok(()),
            EstimatorConfig::Mcd { passes } => {
                if passes == 0 {
                    Err(Error::config("Monte Carlo dropout needs at least one pass"))
                } else {
                    Ok(())
                }
            }
            EstimatorConfig::Ensemble { members } => {
                if members < 2 {
                    Err(Error::config("an ensemble needs at least two members"))
                } else {
                    Ok(())
                }
            }
            EstimatorConfig::Swag { samples, rank } => {
                if samples == 0 {
                    Err(Error::config("at least one weight sample is required"))
                } else if rank < 2 {
                    Err(Error::config(
                        "posterior needs room for at least two deviation columns",
                    ))
                } else {
                    Ok(())
                }
            }
            EstimatorConfig::Ash {
                pruning_percent,
                layer_offset,
            } => AshConfig::new(pruning_percent, layer_offset).map(|_| ()),
        }
    }
}

/// Network shape and training length used for the stream's classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSettings {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            hidden_sizes: vec![32, 16, 8],
            dropout_rate: 0.1,
            epochs: 50,
        }
    }
}

impl NetworkSettings {
    /// Binds the settings to a concrete stream's dimensions.
    pub fn to_architecture(&self, stream: &DatasetStream) -> Result<ArchitectureSpec> {
        ArchitectureSpec::new(
            stream.num_features(),
            self.hidden_sizes.clone(),
            stream.num_classes(),
            self.dropout_rate,
            self.epochs,
        )
    }
}

/// How retraining is triggered during the online phase.
#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    /// Never retrain; the initial model scores the whole stream.
    Baseline,
    /// Adaptive-windowing detector over per-sample entropy.
    Detect,
    /// Retrain at predetermined online positions.
    FixedPositions {
        strategy: PositionStrategy,
        count: usize,
    },
}

/// How fixed retraining positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionStrategy {
    /// Equally spaced over the online segment.
    Equal,
    /// Uniformly sampled without replacement, per seed.
    Random,
}

impl RunMode {
    pub fn name(&self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::Detect => "detect",
            RunMode::FixedPositions {
                strategy: PositionStrategy::Equal,
                ..
            } => "fixed-equal",
            RunMode::FixedPositions {
                strategy: PositionStrategy::Random,
                ..
            } => "fixed-random",
        }
    }
}

/// Everything a stream experiment needs beyond the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub estimator: EstimatorConfig,
    pub network: NetworkSettings,
    pub mode: RunMode,
    /// Detector confidence parameter (used in [`RunMode::Detect`]).
    pub adwin_delta: f64,
    /// Fraction of the stream used as the initial training segment.
    pub initial_fraction: f64,
    /// Fraction of the stream length taken as the recent-sample window
    /// appended to each retraining set.
    pub recency_fraction: f64,
    /// One run per seed; results are aggregated across them.
    pub seeds: Vec<u64>,
    /// Prediction chunk size during the online phase. Results are identical
    /// for every value; this only controls how eagerly predictions are
    /// computed ahead of their labels.
    pub batch_size: usize,
    pub train: TrainOptions,
    /// Run seeds (and ensemble members) on the thread pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            estimator: EstimatorConfig::Basic,
            network: NetworkSettings::default(),
            mode: RunMode::Detect,
            adwin_delta: 0.002,
            initial_fraction: 0.05,
            recency_fraction: 0.01,
            seeds: vec![0, 1, 2, 3, 4],
            batch_size: 64,
            train: TrainOptions::default(),
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    /// Full validation against a concrete stream, including the
    /// estimator/network interactions (dropout for Monte Carlo estimation,
    /// enough epochs for posterior moments, pruning depth within the
    /// network).
    pub fn validate(&self, stream: &DatasetStream) -> Result<ArchitectureSpec> {
        self.estimator.validate()?;
        let arch = self.network.to_architecture(stream)?;
        match &self.estimator {
            EstimatorConfig::Mcd { .. } if arch.dropout_rate() == 0.0 => {
                return Err(Error::config(
                    "Monte Carlo dropout requires a network trained with a positive dropout rate",
                ));
            }
            EstimatorConfig::Swag { .. } if arch.epochs() < 2 => {
                return Err(Error::config(
                    "posterior sampling needs at least two training epochs",
                ));
            }
            EstimatorConfig::Ash { layer_offset, .. }
                if *layer_offset > arch.hidden_sizes().len() =>
            {
                return Err(Error::config(format!(
                    "layer offset {layer_offset} exceeds the network's {} hidden layers",
                    arch.hidden_sizes().len()
                )));
            }
            _ => {}
        }
        if !self.initial_fraction.is_finite()
            || self.initial_fraction <= 0.0
            || self.initial_fraction >= 1.0
        {
            return Err(Error::config(format!(
                "initial fraction must lie strictly between 0 and 1, got {}",
                self.initial_fraction
            )));
        }
        if !self.recency_fraction.is_finite()
            || self.recency_fraction <= 0.0
            || self.recency_fraction >= 1.0
        {
            return Err(Error::config(format!(
                "recency fraction must lie strictly between 0 and 1, got {}",
                self.recency_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("prediction batch size must be positive"));
        }
        if let RunMode::Detect = self.mode {
            crate::adwin::AdwinDetector::new(self.adwin_delta)?;
        }
        if let RunMode::FixedPositions { count, .. } = self.mode {
            if count == 0 {
                return Err(Error::config(
                    "position validation needs at least one retraining position",
                ));
            }
        }
        Ok(arch)
    }
}
