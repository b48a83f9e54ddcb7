//! Prequential evaluation: score, then learn.
//!
//! The online loop computes predictions for a chunk of upcoming samples with
//! the current model, then reveals labels one at a time. Each sample updates
//! the confusion matrix and calibration bins, and its predictive entropy is
//! offered to the retraining trigger. When the trigger fires at online
//! position `j`, a new model is trained on the initial segment plus the most
//! recent online samples up to and including `j`, the remainder of the chunk
//! is discarded (it was predicted by the stale model), and scoring resumes
//! at `j + 1`. Chunking is therefore invisible in the results: predictions
//! depend only on the model in force at each position.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::adwin::AdwinDetector;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_seeds, CalibrationBins, ConfusionMatrix, RunMetrics, SeedAggregate,
};
use crate::nn::{train, train_with_observer, ArchitectureSpec, ModelParams, TrainingSet};
use crate::seeds;
use crate::stream::{
    equal_positions, random_positions, split_initial, DatasetStream, EstimatorConfig,
    ExperimentConfig, PositionStrategy, RunMode,
};
use crate::uncertainty::{
    predict_ash, predict_basic, predict_ensemble, predict_mcd, predict_swag, AshConfig,
    EnsembleModel, PredictiveDistribution, SwagPosterior,
};

/// Number of equal-width confidence bins used for calibration error.
pub const CALIBRATION_BINS: usize = 10;

/// One retraining during the online phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetrainingEvent {
    /// Online index of the sample whose score triggered the retraining.
    pub position: usize,
    /// Samples in the retraining set (initial segment plus recent window).
    pub training_set_size: usize,
}

/// Everything produced by a single seeded pass over the stream.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub confusion: ConfusionMatrix,
    pub calibration: CalibrationBins,
    pub events: Vec<RetrainingEvent>,
}

/// All seeded runs of one configuration plus their aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub estimator: String,
    pub mode: String,
    pub runs: Vec<RunOutput>,
    pub aggregate: SeedAggregate,
}

/// A trained model wired to its uncertainty estimator.
enum Predictor {
    Basic {
        params: ModelParams,
    },
    Mcd {
        params: ModelParams,
        dropout_rate: f64,
        passes: usize,
    },
    Ensemble {
        model: EnsembleModel,
    },
    Swag {
        samples: Vec<ModelParams>,
    },
    Ash {
        params: ModelParams,
        config: AshConfig,
    },
}

impl Predictor {
    /// Trains the estimator's model(s) on `data`. All randomness — weight
    /// init, shuffling, dropout, member seeds, posterior draws — descends
    /// from `fit_seed`.
    fn fit(
        config: &ExperimentConfig,
        arch: &ArchitectureSpec,
        data: &TrainingSet,
        fit_seed: u64,
    ) -> Result<Self> {
        match config.estimator {
            EstimatorConfig::Basic => Ok(Predictor::Basic {
                params: train(arch, data, &config.train, fit_seed)?,
            }),
            EstimatorConfig::Mcd { passes } => Ok(Predictor::Mcd {
                params: train(arch, data, &config.train, fit_seed)?,
                dropout_rate: arch.dropout_rate(),
                passes,
            }),
            EstimatorConfig::Ensemble { members } => {
                let member_seeds: Vec<u64> = (0..members as u64)
                    .map(|i| seeds::derive(fit_seed, seeds::STREAM_MEMBER, i))
                    .collect();
                let train_one = |&seed: &u64| train(arch, data, &config.train, seed);
                let params: Vec<ModelParams> = if config.parallel {
                    member_seeds
                        .par_iter()
                        .map(train_one)
                        .collect::<Result<_>>()?
                } else {
                    member_seeds.iter().map(train_one).collect::<Result<_>>()?
                };
                Ok(Predictor::Ensemble {
                    model: EnsembleModel::new(params)?,
                })
            }
            EstimatorConfig::Swag { samples, rank } => {
                let mut posterior = SwagPosterior::new(arch.param_count(), rank)?;
                let mut observe_error: Option<Error> = None;
                train_with_observer(arch, data, &config.train, fit_seed, |report| {
                    if observe_error.is_none() {
                        if let Err(e) = posterior.observe_params(report.params) {
                            observe_error = Some(e);
                        }
                    }
                })?;
                if let Some(e) = observe_error {
                    return Err(e);
                }
                let mut rng = seeds::rng(fit_seed, seeds::STREAM_SWAG, 0);
                Ok(Predictor::Swag {
                    samples: posterior.sample_params(arch, samples, &mut rng)?,
                })
            }
            EstimatorConfig::Ash {
                pruning_percent,
                layer_offset,
            } => Ok(Predictor::Ash {
                params: train(arch, data, &config.train, fit_seed)?,
                config: AshConfig::new(pruning_percent, layer_offset)?,
            }),
        }
    }

    /// Scores one online sample. `index` is the sample's online position,
    /// so stochastic estimators give the same answer when a position is
    /// replayed by an identically trained model.
    fn predict(
        &self,
        input: &[f64],
        run_seed: u64,
        index: usize,
    ) -> Result<(PredictiveDistribution, f64)> {
        match self {
            Predictor::Basic { params } => predict_basic(params, input),
            Predictor::Mcd {
                params,
                dropout_rate,
                passes,
            } => {
                let mut rng = seeds::rng(run_seed, seeds::STREAM_MCD, index as u64);
                predict_mcd(params, input, *dropout_rate, *passes, &mut rng)
            }
            Predictor::Ensemble { model } => predict_ensemble(model, input),
            Predictor::Swag { samples } => predict_swag(samples, input),
            Predictor::Ash { params, config } => predict_ash(params, input, config),
        }
    }
}

/// Retraining triggers for the three run modes.
enum Trigger<'a> {
    Never,
    Detector(AdwinDetector),
    Positions { list: &'a [usize], next: usize },
}

impl Trigger<'_> {
    fn fires(&mut self, index: usize, entropy: f64) -> Result<bool> {
        match self {
            Trigger::Never => Ok(false),
            Trigger::Detector(detector) => Ok(detector.insert(entropy)?.drift_detected),
            Trigger::Positions { list, next } => {
                if *next < list.len() && list[*next] == index {
                    *next += 1;
                    Ok(true)
                } else {
                    Ok(false)
                }
            }
        }
    }

    fn acknowledge_retraining(&mut self) {
        if let Trigger::Detector(detector) = self {
            detector.reset();
        }
    }
}

/// Builds the retraining set for a trigger at online position `trigger_index`:
/// the full initial segment followed by the `window` most recent online
/// samples ending at the trigger (fewer if the stream has not yet produced
/// that many).
fn retraining_set(
    initial: &TrainingSet,
    online: &TrainingSet,
    trigger_index: usize,
    window: usize,
) -> Result<TrainingSet> {
    let take = window.min(trigger_index + 1);
    let start = trigger_index + 1 - take;
    let dim = initial.features().cols();
    let mut features = crate::tensor::Tensor2D::zeros(initial.len() + take, dim);
    let mut labels = Vec::with_capacity(initial.len() + take);
    for i in 0..initial.len() {
        features
            .row_mut(i)
            .copy_from_slice(initial.features().row(i));
        labels.push(initial.labels()[i]);
    }
    for (offset, j) in (start..=trigger_index).enumerate() {
        features
            .row_mut(initial.len() + offset)
            .copy_from_slice(online.features().row(j));
        labels.push(online.labels()[j]);
    }
    TrainingSet::new(features, labels)
}

fn run_stream(
    stream: &DatasetStream,
    config: &ExperimentConfig,
    arch: &ArchitectureSpec,
    seed: u64,
    mut trigger: Trigger<'_>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let (initial, online) = split_initial(stream, config.initial_fraction)?;
    let recent_window = (stream.len() as f64 * config.recency_fraction).floor() as usize;

    let mut ordinal: u64 = 0;
    let mut predictor = Predictor::fit(
        config,
        arch,
        &initial,
        seeds::derive(seed, seeds::STREAM_RETRAIN, ordinal),
    )?;

    let mut confusion = ConfusionMatrix::new(stream.num_classes())?;
    let mut calibration = CalibrationBins::new(CALIBRATION_BINS)?;
    let mut events: Vec<RetrainingEvent> = Vec::new();

    let n_online = online.len();
    let mut i = 0;
    while i < n_online {
        let end = (i + config.batch_size).min(n_online);
        let mut chunk = Vec::with_capacity(end - i);
        for j in i..end {
            chunk.push(predictor.predict(online.features().row(j), seed, j)?);
        }
        let mut resume_at = end;
        for (offset, (dist, entropy)) in chunk.iter().enumerate() {
            let j = i + offset;
            let truth = online.labels()[j];
            let predicted = dist.argmax();
            confusion.update(truth, predicted)?;
            calibration.update(dist.confidence(), predicted == truth)?;
            if trigger.fires(j, *entropy)? {
                ordinal += 1;
                let data = retraining_set(&initial, &online, j, recent_window)?;
                events.push(RetrainingEvent {
                    position: j,
                    training_set_size: data.len(),
                });
                predictor = Predictor::fit(
                    config,
                    arch,
                    &data,
                    seeds::derive(seed, seeds::STREAM_RETRAIN, ordinal),
                )?;
                trigger.acknowledge_retraining();
                resume_at = j + 1;
                break;
            }
        }
        i = resume_at;
    }

    let positions: Vec<usize> = events.iter().map(|e| e.position).collect();
    let metrics = RunMetrics::new(
        confusion.mcc()?,
        calibration.ece()?,
        positions,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(RunOutput {
        seed,
        metrics,
        confusion,
        calibration,
        events,
    })
}

/// Scores the whole online segment with the initial model; no retraining.
pub fn run_baseline(
    stream: &DatasetStream,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    let arch = config.network.to_architecture(stream)?;
    run_stream(stream, config, &arch, seed, Trigger::Never)
}

/// Feeds per-sample entropy to an adaptive-windowing detector and retrains
/// whenever it reports a change.
pub fn run_detection(
    stream: &DatasetStream,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<RunOutput> {
    let arch = config.network.to_architecture(stream)?;
    let detector = AdwinDetector::new(config.adwin_delta)?;
    run_stream(stream, config, &arch, seed, Trigger::Detector(detector))
}

/// Retrains at the given online positions (strictly increasing, in range),
/// using the same scoring path as detection so a detection run replayed at
/// its recorded positions reproduces itself exactly.
pub fn run_fixed_positions(
    stream: &DatasetStream,
    config: &ExperimentConfig,
    seed: u64,
    positions: &[usize],
) -> Result<RunOutput> {
    let arch = config.network.to_architecture(stream)?;
    let (_, online) = split_initial(stream, config.initial_fraction)?;
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("positions must be strictly increasing"));
    }
    if let Some(&last) = positions.last() {
        if last >= online.len() {
            return Err(Error::input(format!(
                "position {last} is outside the online segment of {}",
                online.len()
            )));
        }
    }
    run_stream(
        stream,
        config,
        &arch,
        seed,
        Trigger::Positions {
            list: positions,
            next: 0,
        },
    )
}

fn run_for_seed(stream: &DatasetStream, config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    match config.mode {
        RunMode::Baseline => run_baseline(stream, config, seed),
        RunMode::Detect => run_detection(stream, config, seed),
        RunMode::FixedPositions { strategy, count } => {
            let (_, online) = split_initial(stream, config.initial_fraction)?;
            let positions = match strategy {
                PositionStrategy::Equal => equal_positions(count, online.len())?,
                PositionStrategy::Random => random_positions(
                    count,
                    online.len(),
                    seeds::derive(seed, seeds::STREAM_POSITIONS, 0),
                )?,
            };
            run_fixed_positions(stream, config, seed, &positions)
        }
    }
}

/// Runs the configured mode once per seed and aggregates the per-run
/// metrics. Seeds run on the thread pool when `config.parallel` is set;
/// outputs are ordered by seed either way.
pub fn run_experiment(
    stream: &DatasetStream,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate(stream)?;
    let runs: Vec<RunOutput> = if config.parallel && config.seeds.len() > 1 {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_for_seed(stream, config, seed))
            .collect::<Result<_>>()?
    } else {
        config
            .seeds
            .iter()
            .map(|&seed| run_for_seed(stream, config, seed))
            .collect::<Result<_>>()?
    };
    let aggregate = aggregate_seeds(&runs.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>())?;
    Ok(ExperimentReport {
        dataset: stream.name().to_string(),
        estimator: config.estimator.name().to_string(),
        mode: config.mode.name().to_string(),
        runs,
        aggregate,
    })
}
