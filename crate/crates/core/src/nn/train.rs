//! Minibatch training loop.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward, cross_entropy_loss, forward_train, init_params, AdamConfig, AdamState,
    ArchitectureSpec, ModelParams,
};
use crate::seeds;
use crate::tensor::Tensor2D;

/// Labelled training data: one feature row per sample, labels as dense class
/// indices.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    features: Tensor2D,
    labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(features: Tensor2D, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(TrainingSet { features, labels })
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Knobs of the training loop itself (architecture-independent).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Minibatch size; the last batch of an epoch may be smaller.
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Snapshot handed to the epoch observer after each completed epoch.
#[derive(Debug)]
pub struct EpochReport<'a> {
    /// Zero-based index of the epoch that just finished.
    pub epoch: usize,
    /// Parameters after the epoch's updates.
    pub params: &'a ModelParams,
    /// Mean training loss over the epoch (dropout active).
    pub mean_loss: f64,
}

/// Trains a fresh network on `data`.
///
/// The run is fully determined by `(arch, data, options, seed)`: weight
/// initialisation, minibatch shuffling, and dropout masks each draw from an
/// independent generator derived from `seed`. Every epoch shuffles the
/// sample order, walks it in `batch_size` chunks, and applies one Adam
/// update per chunk.
pub fn train(
    arch: &ArchitectureSpec,
    data: &TrainingSet,
    options: &TrainOptions,
    seed: u64,
) -> Result<ModelParams> {
    train_with_observer(arch, data, options, seed, |_| {})
}

/// [`train`] with a hook invoked after every epoch, used for posterior
/// moment collection and loss tracing.
pub fn train_with_observer<F>(
    arch: &ArchitectureSpec,
    data: &TrainingSet,
    options: &TrainOptions,
    seed: u64,
    mut observer: F,
) -> Result<ModelParams>
where
    F: FnMut(&EpochReport),
{
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if data.features().cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "architecture expects {} features, data has {}",
            arch.input_dim(),
            data.features().cols()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= arch.num_classes()) {
        return Err(Error::input(format!(
            "label {bad} out of range for {} classes",
            arch.num_classes()
        )));
    }
    if options.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }

    let mut params = init_params(arch, seed);
    let mut state = AdamState::new(&params, options.adam)?;
    let mut shuffle_rng = seeds::rng(seed, seeds::STREAM_SHUFFLE, 0);
    let mut dropout_rng = seeds::rng(seed, seeds::STREAM_DROPOUT, 0);

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..arch.epochs() {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(options.batch_size) {
            let mut batch = Tensor2D::zeros(chunk.len(), arch.input_dim());
            let mut labels = Vec::with_capacity(chunk.len());
            for (r, &idx) in chunk.iter().enumerate() {
                batch.row_mut(r).copy_from_slice(data.features().row(idx));
                labels.push(data.labels()[idx]);
            }
            let acts = forward_train(&params, &batch, arch.dropout_rate(), &mut dropout_rng)?;
            loss_sum += cross_entropy_loss(&acts.probs, &labels)? * chunk.len() as f64;
            let grads = backward(&params, &acts, &batch, &labels)?;
            adam_step(&mut params, &grads, &mut state)?;
        }
        observer(&EpochReport {
            epoch,
            params: &params,
            mean_loss: loss_sum / n as f64,
        });
    }
    Ok(params)
}

/// Fraction of samples whose highest-probability class matches the label.
pub fn evaluate_accuracy(params: &ModelParams, data: &TrainingSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    let mut correct = 0usize;
    for (row, &label) in data.features().iter_rows().zip(data.labels()) {
        let probs = super::predict_probs(params, row)?;
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        correct += (pred == label) as usize;
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two well-separated Gaussian blobs, one per class.
    fn blob_data(n: usize, seed: u64) -> TrainingSet {
        let mut rng = seeds::rng(seed, 99, 0);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            rows.push(vec![
                center + rng.random::<f64>() - 0.5,
                -center + rng.random::<f64>() - 0.5,
            ]);
            labels.push(class);
        }
        TrainingSet::new(Tensor2D::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn training_set_validates_lengths() {
        let features = Tensor2D::zeros(3, 2);
        assert!(TrainingSet::new(features.clone(), vec![0, 1]).is_err());
        assert!(TrainingSet::new(features, vec![0, 1, 0]).is_ok());
    }

    #[test]
    fn train_rejects_inconsistent_inputs() {
        let arch = ArchitectureSpec::new(2, vec![4], 2, 0.0, 1).unwrap();
        let opts = TrainOptions::default();
        let wrong_dim = TrainingSet::new(Tensor2D::zeros(4, 3), vec![0, 1, 0, 1]).unwrap();
        assert!(train(&arch, &wrong_dim, &opts, 0).is_err());
        let wrong_label = TrainingSet::new(Tensor2D::zeros(2, 2), vec![0, 2]).unwrap();
        assert!(train(&arch, &wrong_label, &opts, 0).is_err());
        let bad_batch = TrainOptions {
            batch_size: 0,
            ..TrainOptions::default()
        };
        let data = blob_data(8, 0);
        assert!(train(&arch, &data, &bad_batch, 0).is_err());
    }

    #[test]
    fn training_separates_blobs() {
        let arch = ArchitectureSpec::new(2, vec![16, 8], 2, 0.1, 30).unwrap();
        let data = blob_data(200, 7);
        let params = train(&arch, &data, &TrainOptions::default(), 0).unwrap();
        let acc = evaluate_accuracy(&params, &data).unwrap();
        assert!(acc > 0.97, "training accuracy {acc} too low");
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let arch = ArchitectureSpec::new(2, vec![16], 2, 0.0, 20).unwrap();
        let data = blob_data(200, 3);
        let mut losses = Vec::new();
        train_with_observer(&arch, &data, &TrainOptions::default(), 0, |report| {
            losses.push(report.mean_loss);
        })
        .unwrap();
        assert_eq!(losses.len(), 20);
        assert!(
            losses[19] < 0.5 * losses[0],
            "loss failed to drop: first {} last {}",
            losses[0],
            losses[19]
        );
    }

    #[test]
    fn same_seed_reproduces_parameters_exactly() {
        let arch = ArchitectureSpec::new(2, vec![8], 2, 0.2, 5).unwrap();
        let data = blob_data(64, 1);
        let a = train(&arch, &data, &TrainOptions::default(), 11).unwrap();
        let b = train(&arch, &data, &TrainOptions::default(), 11).unwrap();
        let c = train(&arch, &data, &TrainOptions::default(), 12).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn observer_sees_every_epoch_in_order() {
        let arch = ArchitectureSpec::new(2, vec![4], 2, 0.0, 7).unwrap();
        let data = blob_data(16, 2);
        let mut epochs = Vec::new();
        train_with_observer(&arch, &data, &TrainOptions::default(), 0, |report| {
            epochs.push(report.epoch);
            assert!(report.params.matches(&arch));
        })
        .unwrap();
        assert_eq!(epochs, (0..7).collect::<Vec<_>>());
    }
}
