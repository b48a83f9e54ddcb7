//! Uncertainty estimators over a trained classifier.
//!
//! Every estimator turns one input sample into a predictive distribution
//! plus its Shannon entropy. The single-pass estimator reads the softmax
//! directly; the Bayesian approximations (Monte Carlo dropout, deep
//! ensembles, weight-posterior sampling) average several categorical
//! distributions — a Bayesian model average — before the entropy is taken,
//! and activation shaping prunes low activations mid-forward-pass. Entropy
//! uses log base 2, so it is measured in bits and bounded by `log2(K)`.

mod swag;

pub use swag::SwagPosterior;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, ModelParams};

/// Categorical distribution over `K >= 2` classes: entries are non-negative
/// and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    probs: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::input(
                "a predictive distribution needs at least two classes",
            ));
        }
        if let Some(&bad) = probs.iter().find(|&&p| !p.is_finite() || p < 0.0) {
            return Err(Error::input(format!(
                "probability {bad} is negative or non-finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(PredictiveDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Highest class probability.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the highest-probability class; ties resolve to the lowest
    /// index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A non-empty collection of categorical distributions over the same
/// classes, one per stochastic forward pass / ensemble member / weight
/// sample.
#[derive(Debug, Clone)]
pub struct SampleSet {
    samples: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("sample set must contain at least one sample"));
        }
        let k = samples[0].len();
        for (i, row) in samples.iter().enumerate() {
            if row.len() != k {
                return Err(Error::shape(format!(
                    "sample 0 has {k} classes but sample {i} has {}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&p| !p.is_finite() || p < 0.0) {
                return Err(Error::input(format!(
                    "sample {i} contains invalid probability {bad}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!(
                    "sample {i} sums to {sum}, expected 1 within 1e-9"
                )));
            }
        }
        if k < 2 {
            return Err(Error::input(
                "a predictive distribution needs at least two classes",
            ));
        }
        Ok(SampleSet { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty sets
    }

    pub fn num_classes(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Bayesian model average: the column-wise mean of the sampled
/// distributions. The mean of valid distributions is again a distribution;
/// should accumulated rounding push the sum more than 1e-9 from 1, the
/// result is renormalised.
pub fn bma_average(samples: &SampleSet) -> PredictiveDistribution {
    let k = samples.num_classes();
    let mut mean = vec![0.0; k];
    for row in samples.samples() {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    let count = samples.len() as f64;
    for m in &mut mean {
        *m /= count;
    }
    let sum: f64 = mean.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        for m in &mut mean {
            *m /= sum;
        }
    }
    PredictiveDistribution::new(mean).expect("mean of distributions is a distribution")
}

/// Shannon entropy in bits: `-sum(p * log2(p))`, with `0 * log2(0)` taken
/// as 0. Exactly 0 for one-hot distributions, maximal (`log2 K`) for the
/// uniform distribution.
pub fn shannon_entropy(dist: &PredictiveDistribution) -> f64 {
    entropy_bits(dist.probs())
}

pub(crate) fn entropy_bits(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

/// Single deterministic softmax pass.
pub fn predict_basic(params: &ModelParams, input: &[f64]) -> Result<(PredictiveDistribution, f64)> {
    let dist = PredictiveDistribution::new(nn::predict_probs(params, input)?)?;
    let entropy = shannon_entropy(&dist);
    Ok((dist, entropy))
}

/// Monte Carlo dropout: `passes` stochastic forward passes with dropout
/// active at `dropout_rate` (the rate the network was trained with),
/// averaged into one distribution. A network trained without dropout cannot
/// use this estimator — a zero rate is a configuration error.
pub fn predict_mcd<R: Rng>(
    params: &ModelParams,
    input: &[f64],
    dropout_rate: f64,
    passes: usize,
    rng: &mut R,
) -> Result<(PredictiveDistribution, f64)> {
    if passes == 0 {
        return Err(Error::config("Monte Carlo dropout needs at least one pass"));
    }
    if dropout_rate == 0.0 {
        return Err(Error::config(
            "Monte Carlo dropout requires a network trained with a positive dropout rate",
        ));
    }
    let mut rows = Vec::with_capacity(passes);
    for _ in 0..passes {
        rows.push(nn::predict_probs_dropout(params, input, dropout_rate, rng)?);
    }
    let dist = bma_average(&SampleSet::new(rows)?);
    let entropy = shannon_entropy(&dist);
    Ok((dist, entropy))
}

/// Independently trained copies of one architecture, differing only in
/// their training seed.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<ModelParams>,
}

impl EnsembleModel {
    /// At least two members, all with identical layer shapes.
    pub fn new(members: Vec<ModelParams>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::config("an ensemble needs at least two members"));
        }
        let dims: Vec<(usize, usize)> = members[0]
            .layers()
            .iter()
            .map(|l| (l.fan_in(), l.fan_out()))
            .collect();
        for (i, member) in members.iter().enumerate().skip(1) {
            let other: Vec<(usize, usize)> = member
                .layers()
                .iter()
                .map(|l| (l.fan_in(), l.fan_out()))
                .collect();
            if other != dims {
                return Err(Error::shape(format!(
                    "ensemble member {i} has a different architecture"
                )));
            }
        }
        Ok(EnsembleModel { members })
    }

    pub fn members(&self) -> &[ModelParams] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor requires two members
    }
}

/// Deep ensemble: one deterministic pass per member, averaged.
pub fn predict_ensemble(
    ensemble: &EnsembleModel,
    input: &[f64],
) -> Result<(PredictiveDistribution, f64)> {
    let mut rows = Vec::with_capacity(ensemble.len());
    for member in ensemble.members() {
        rows.push(nn::predict_probs(member, input)?);
    }
    let dist = bma_average(&SampleSet::new(rows)?);
    let entropy = shannon_entropy(&dist);
    Ok((dist, entropy))
}

/// Posterior-weight averaging: one deterministic pass per sampled parameter
/// set (drawn once per training via [`SwagPosterior::sample_params`]),
/// averaged.
pub fn predict_swag(
    weight_samples: &[ModelParams],
    input: &[f64],
) -> Result<(PredictiveDistribution, f64)> {
    if weight_samples.is_empty() {
        return Err(Error::input(
            "posterior prediction needs at least one weight sample",
        ));
    }
    let mut rows = Vec::with_capacity(weight_samples.len());
    for params in weight_samples {
        rows.push(nn::predict_probs(params, input)?);
    }
    let dist = bma_average(&SampleSet::new(rows)?);
    let entropy = shannon_entropy(&dist);
    Ok((dist, entropy))
}

/// Activation-shaping settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AshConfig {
    /// Percentage of activations zeroed at the target layer, in (0, 100).
    pub pruning_percent: f64,
    /// Which hidden layer to prune, counted from the output: 1 is the last
    /// hidden layer, 2 the one before it (the third-to-last layer of the
    /// whole network, counting the output).
    pub layer_offset: usize,
}

impl AshConfig {
    pub fn new(pruning_percent: f64, layer_offset: usize) -> Result<Self> {
        if !pruning_percent.is_finite() || pruning_percent <= 0.0 || pruning_percent >= 100.0 {
            return Err(Error::config(format!(
                "pruning percentage must lie strictly between 0 and 100, got {pruning_percent}"
            )));
        }
        if layer_offset == 0 {
            return Err(Error::config(
                "layer offset counts from the output and starts at 1",
            ));
        }
        Ok(AshConfig {
            pruning_percent,
            layer_offset,
        })
    }
}

impl Default for AshConfig {
    fn default() -> Self {
        AshConfig {
            pruning_percent: 60.0,
            layer_offset: 2,
        }
    }
}

/// Zeroes the `floor(n * percent / 100)` smallest values, ties broken
/// toward lower indices; surviving values are returned bit-identical.
pub fn ash_prune(values: &[f64], pruning_percent: f64) -> Result<Vec<f64>> {
    if !pruning_percent.is_finite() || !(0.0..=100.0).contains(&pruning_percent) {
        return Err(Error::input(format!(
            "pruning percentage must lie in [0, 100], got {pruning_percent}"
        )));
    }
    let mut pruned = values.to_vec();
    ash_prune_in_place(&mut pruned, pruning_percent);
    Ok(pruned)
}

fn ash_prune_in_place(values: &mut [f64], pruning_percent: f64) {
    let zero_count = (values.len() as f64 * pruning_percent / 100.0).floor() as usize;
    if zero_count == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort by value keeps lower indices first among ties, so those
    // are the ones pruned.
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    for &idx in &order[..zero_count] {
        values[idx] = 0.0;
    }
}

/// Activation shaping: a single deterministic pass whose target hidden
/// layer is pruned with [`ash_prune`] before propagating further. The
/// sample's own activations set the threshold; nothing is calibrated
/// offline.
pub fn predict_ash(
    params: &ModelParams,
    input: &[f64],
    config: &AshConfig,
) -> Result<(PredictiveDistribution, f64)> {
    let num_hidden = params.num_hidden();
    if config.layer_offset > num_hidden {
        return Err(Error::config(format!(
            "layer offset {} exceeds the network's {num_hidden} hidden layers",
            config.layer_offset
        )));
    }
    let target = num_hidden - config.layer_offset;
    let probs = nn::forward_row_with(params, input, |layer, activations| {
        if layer == target {
            ash_prune_in_place(activations, config.pruning_percent);
        }
    })?;
    let dist = PredictiveDistribution::new(probs)?;
    let entropy = shannon_entropy(&dist);
    Ok((dist, entropy))
}
