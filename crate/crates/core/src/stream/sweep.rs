//! Hyperparameter grid sweeps over a single-seed run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stream::{DatasetStream, EstimatorConfig, ExperimentConfig};

/// A grid of hyperparameter values keyed by name. Recognised keys:
///
/// | key               | applies to | meaning                               |
/// |-------------------|------------|---------------------------------------|
/// | `passes`          | mcd        | stochastic forward passes per sample  |
/// | `members`         | ensemble   | networks in the ensemble              |
/// | `samples`         | swag       | weight draws from the posterior       |
/// | `rank`            | swag       | maximum deviation columns             |
/// | `pruning_percent` | ash        | share of activations zeroed           |
/// | `layer_offset`    | ash        | hidden layer counted from the output  |
/// | `delta`           | any        | detector confidence parameter         |
///
/// A key that does not apply to the configured estimator is a configuration
/// error, so a typo cannot silently sweep nothing.
#[derive(Debug, Clone, Default)]
pub struct SweepGrid {
    entries: BTreeMap<String, Vec<f64>>,
}

/// Result of one grid point, evaluated with the first configured seed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub setting: BTreeMap<String, f64>,
    pub mcc: f64,
    pub ece: f64,
    pub retrainings: usize,
    pub wall_time_s: f64,
}

const KEYS: &[&str] = &[
    "passes",
    "members",
    "samples",
    "rank",
    "pruning_percent",
    "layer_offset",
    "delta",
];

impl SweepGrid {
    pub fn new() -> Self {
        SweepGrid::default()
    }

    /// Adds one axis. Key aliases: `layer_index` for `layer_offset`.
    pub fn add(&mut self, key: &str, values: Vec<f64>) -> Result<()> {
        let canonical = match key.to_ascii_lowercase().as_str() {
            "layer_index" => "layer_offset".to_string(),
            other if KEYS.contains(&other) => other.to_string(),
            other => {
                return Err(Error::config(format!(
                    "unknown sweep key {other:?}; expected one of {}",
                    KEYS.join(", ")
                )))
            }
        };
        if values.is_empty() {
            return Err(Error::config(format!(
                "sweep key {canonical:?} has no values"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "sweep key {canonical:?} has a non-finite value"
            )));
        }
        if self.entries.contains_key(&canonical) {
            return Err(Error::config(format!(
                "sweep key {canonical:?} given twice"
            )));
        }
        self.entries.insert(canonical, values);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of grid points (product of axis lengths).
    pub fn num_points(&self) -> usize {
        self.entries.values().map(Vec::len).product()
    }
}

fn as_count(key: &str, value: f64, min: usize) -> Result<usize> {
    if value.fract() != 0.0 || value < min as f64 || value > usize::MAX as f64 {
        return Err(Error::config(format!(
            "sweep key {key:?} needs an integer of at least {min}, got {value}"
        )));
    }
    Ok(value as usize)
}

/// Applies one grid point to a copy of the configuration.
fn apply(config: &mut ExperimentConfig, setting: &BTreeMap<String, f64>) -> Result<()> {
    for (key, &value) in setting {
        match (key.as_str(), &mut config.estimator) {
            ("passes", EstimatorConfig::Mcd { passes }) => {
                *passes = as_count(key, value, 1)?;
            }
            ("members", EstimatorConfig::Ensemble { members }) => {
                *members = as_count(key, value, 2)?;
            }
            ("samples", EstimatorConfig::Swag { samples, .. }) => {
                *samples = as_count(key, value, 1)?;
            }
            ("rank", EstimatorConfig::Swag { rank, .. }) => {
                *rank = as_count(key, value, 2)?;
            }
            (
                "pruning_percent",
                EstimatorConfig::Ash {
                    pruning_percent, ..
                },
            ) => {
                *pruning_percent = value;
            }
            ("layer_offset", EstimatorConfig::Ash { layer_offset, .. }) => {
                *layer_offset = as_count(key, value, 1)?;
            }
            ("delta", _) => {
                config.adwin_delta = value;
            }
            (key, estimator) => {
                return Err(Error::config(format!(
                    "sweep key {key:?} does not apply to the {} estimator",
                    estimator.name()
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates every point of the grid with the first configured seed,
/// running the configured mode each time. Rows come out in lexicographic
/// key/value order, so a sweep is reproducible row for row.
pub fn sweep(
    stream: &DatasetStream,
    config: &ExperimentConfig,
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Error::config("at least one seed is required"))?;

    let keys: Vec<&String> = grid.entries.keys().collect();
    let axes: Vec<&Vec<f64>> = grid.entries.values().collect();
    let mut indices = vec![0usize; keys.len()];
    let mut rows = Vec::with_capacity(grid.num_points());
    loop {
        let setting: BTreeMap<String, f64> = keys
            .iter()
            .enumerate()
            .map(|(axis, k)| ((*k).clone(), axes[axis][indices[axis]]))
            .collect();

        let mut point = config.clone();
        point.seeds = vec![seed];
        apply(&mut point, &setting)?;
        point.validate(stream)?;
        let report = super::run_experiment(stream, &point)?;
        let run = &report.runs[0];
        rows.push(SweepRow {
            setting,
            mcc: run.metrics.mcc,
            ece: run.metrics.ece,
            retrainings: run.metrics.retraining_count,
            wall_time_s: run.metrics.wall_time_s,
        });

        // Advance the mixed-radix counter; last axis varies fastest.
        let mut axis = keys.len();
        loop {
            if axis == 0 {
                return Ok(rows);
            }
            axis -= 1;
            indices[axis] += 1;
            if indices[axis] < axes[axis].len() {
                break;
            }
            indices[axis] = 0;
        }
    }
}
