//! Small feed-forward classifier trained from scratch.
//!
//! The network is a multilayer perceptron: ReLU hidden layers followed by a
//! softmax output, trained with minibatch Adam on categorical cross-entropy.
//! Weights start He-normal (`std = sqrt(2 / fan_in)`), biases at zero.
//! Inverted dropout is applied after every hidden ReLU during training —
//! kept units are scaled by `1/(1-rate)` so evaluation needs no rescaling —
//! and the same mechanism doubles as the stochastic forward pass used by
//! Monte Carlo estimators. All arithmetic is `f64`.

mod adam;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use train::{
    evaluate_accuracy, train, train_with_observer, EpochReport, TrainOptions, TrainingSet,
};

use rand::Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor2D;

/// Smallest probability fed to the logarithm in the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Shape and training hyperparameters of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    num_classes: usize,
    dropout_rate: f64,
    epochs: usize,
}

impl ArchitectureSpec {
    /// Validates and builds an architecture.
    ///
    /// Requirements: at least one hidden layer, all widths positive,
    /// `num_classes >= 2`, `dropout_rate` in `[0, 1)`, `epochs >= 1`.
    pub fn new(
        input_dim: usize,
        hidden_sizes: Vec<usize>,
        num_classes: usize,
        dropout_rate: f64,
        epochs: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        if hidden_sizes.is_empty() {
            return Err(Error::config("at least one hidden layer is required"));
        }
        if hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        if epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        Ok(ArchitectureSpec {
            input_dim,
            hidden_sizes,
            num_classes,
            dropout_rate,
            epochs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// `(fan_in, fan_out)` of every dense layer, hidden layers first, output
    /// layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut fan_in = self.input_dim;
        for &width in &self.hidden_sizes {
            dims.push((fan_in, width));
            fan_in = width;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }

    /// Total number of trainable scalars (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }
}

/// One dense layer: `weights` is `fan_in x fan_out`, `biases` has length
/// `fan_out`. A layer maps `x` to `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor2D,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Tensor2D, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.cols() {
            return Err(Error::shape(format!(
                "layer with {} outputs got {} biases",
                weights.cols(),
                biases.len()
            )));
        }
        if let Some(bad) = biases.iter().position(|b| !b.is_finite()) {
            return Err(Error::input(format!("non-finite bias at index {bad}")));
        }
        Ok(DenseLayer { weights, biases })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

/// Full parameter set of a network: hidden layers in order, output layer
/// last. Consecutive layers must agree on their shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<DenseLayer>,
}

impl ModelParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::shape(
                "a network needs at least one hidden layer and an output layer",
            ));
        }
        for i in 1..layers.len() {
            if layers[i].fan_in() != layers[i - 1].fan_out() {
                return Err(Error::shape(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    i,
                    layers[i].fan_in(),
                    i - 1,
                    layers[i - 1].fan_out()
                )));
            }
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer(&self, index: usize) -> &DenseLayer {
        &self.layers[index]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of hidden layers (all layers except the output layer).
    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| (l.fan_in() + 1) * l.fan_out())
            .sum()
    }

    /// Serialises all parameters into one vector: for each layer, weights in
    /// row-major order followed by biases. The inverse is [`ModelParams::from_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.weights.values());
            flat.extend_from_slice(&layer.biases);
        }
        flat
    }

    /// Rebuilds parameters for `arch` from a [`ModelParams::flatten`] vector.
    pub fn from_flat(arch: &ArchitectureSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(Error::shape(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                flat.len()
            )));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            let w_len = fan_in * fan_out;
            let weights = Tensor2D::new(fan_in, fan_out, flat[offset..offset + w_len].to_vec())?;
            offset += w_len;
            let biases = flat[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(DenseLayer::new(weights, biases)?);
        }
        ModelParams::new(layers)
    }

    /// Checks that these parameters realise `arch`.
    pub fn matches(&self, arch: &ArchitectureSpec) -> bool {
        let dims = arch.layer_dims();
        self.layers.len() == dims.len()
            && self
                .layers
                .iter()
                .zip(&dims)
                .all(|(l, &(fi, fo))| l.fan_in() == fi && l.fan_out() == fo)
    }
}

/// He-normal initialisation: weights drawn from `N(0, 2/fan_in)`, biases
/// zero. The same `(arch, seed)` pair always yields identical parameters.
pub fn init_params(arch: &ArchitectureSpec, seed: u64) -> ModelParams {
    let mut rng = seeds::rng(seed, seeds::STREAM_INIT, 0);
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let values: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.sample(normal)).collect();
        let weights = Tensor2D::new(fan_in, fan_out, values).expect("sampled values are finite");
        layers.push(DenseLayer {
            weights,
            biases: vec![0.0; fan_out],
        });
    }
    ModelParams { layers }
}

/// Numerically stable softmax: subtracts the maximum logit before
/// exponentiating, so arbitrarily large logits cannot overflow.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty slice");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    exps
}

/// Mean categorical cross-entropy of predicted probabilities against integer
/// labels. Probabilities are clamped to [`PROB_FLOOR`] before the logarithm,
/// so the loss stays finite even for confidently wrong predictions.
pub fn cross_entropy_loss(probs: &Tensor2D, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(Error::input("cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(Error::input(format!(
                "label {label} out of range for {} classes",
                probs.cols()
            )));
        }
        total -= probs.get(r, label).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Everything the forward pass produces, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    /// Output of each hidden layer as seen by the next layer (post-ReLU,
    /// post-dropout in training mode).
    pub hidden: Vec<Tensor2D>,
    /// Post-ReLU values before dropout; empty in evaluation mode, where they
    /// would equal `hidden`.
    pub hidden_pre_dropout: Vec<Tensor2D>,
    /// Per-unit dropout scale (0 for dropped units, `1/(1-rate)` otherwise);
    /// empty in evaluation mode.
    pub dropout_scales: Vec<Tensor2D>,
    /// Output-layer affine values.
    pub logits: Tensor2D,
    /// Softmax probabilities, one row per sample; each row sums to 1.
    pub probs: Tensor2D,
}

/// Computes `input * W + b` into `out`.
pub(crate) fn affine_into(layer: &DenseLayer, input: &[f64], out: &mut Vec<f64>) {
    debug_assert_eq!(input.len(), layer.fan_in());
    out.clear();
    out.extend_from_slice(&layer.biases);
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let wrow = layer.weights.row(i);
        for (acc, &w) in out.iter_mut().zip(wrow) {
            *acc += x * w;
        }
    }
}

pub(crate) fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Runs one sample through the network, letting `tweak` edit each hidden
/// layer's post-ReLU activations in place (dropout, activation shaping, or
/// nothing). Returns the softmax probabilities.
pub(crate) fn forward_row_with<F>(
    params: &ModelParams,
    input: &[f64],
    mut tweak: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &mut [f64]),
{
    if input.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "network expects {} features, got {}",
            params.input_dim(),
            input.len()
        )));
    }
    let mut cur = input.to_vec();
    let mut next = Vec::new();
    for l in 0..params.num_hidden() {
        affine_into(&params.layers[l], &cur, &mut next);
        relu_in_place(&mut next);
        tweak(l, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    affine_into(&params.layers[params.num_layers() - 1], &cur, &mut next);
    Ok(softmax(&next))
}

/// Deterministic forward pass (no dropout). Output probabilities for sample
/// `r` are in `result.probs.row(r)`.
pub fn forward_eval(params: &ModelParams, x: &Tensor2D) -> Result<LayerActivations> {
    forward_impl(params, x, None::<(f64, &mut rand_chacha::ChaCha8Rng)>)
}

/// Training-mode forward pass: inverted dropout after every hidden ReLU.
/// Each unit is dropped independently with probability `dropout_rate`;
/// survivors are scaled by `1/(1-rate)`. A rate of exactly 0 draws nothing
/// from `rng` and matches [`forward_eval`] bit for bit.
pub fn forward_train<R: Rng>(
    params: &ModelParams,
    x: &Tensor2D,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<LayerActivations> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::config(format!(
            "dropout rate must lie in [0, 1), got {dropout_rate}"
        )));
    }
    forward_impl(params, x, Some((dropout_rate, rng)))
}

fn forward_impl<R: Rng>(
    params: &ModelParams,
    x: &Tensor2D,
    mut dropout: Option<(f64, &mut R)>,
) -> Result<LayerActivations> {
    if x.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "network expects {} features, got {}",
            params.input_dim(),
            x.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::input("forward pass on an empty batch"));
    }
    let n = x.rows();
    let num_hidden = params.num_hidden();
    let train_mode = dropout.is_some();

    let mut hidden: Vec<Tensor2D> = params.layers[..num_hidden]
        .iter()
        .map(|l| Tensor2D::zeros(n, l.fan_out()))
        .collect();
    let mut pre_dropout = if train_mode {
        hidden.clone()
    } else {
        Vec::new()
    };
    let mut scales = if train_mode {
        hidden.clone()
    } else {
        Vec::new()
    };
    let mut logits = Tensor2D::zeros(n, params.output_dim());
    let mut probs = Tensor2D::zeros(n, params.output_dim());

    let mut cur = Vec::new();
    let mut next = Vec::new();
    for r in 0..n {
        cur.clear();
        cur.extend_from_slice(x.row(r));
        for l in 0..num_hidden {
            affine_into(&params.layers[l], &cur, &mut next);
            relu_in_place(&mut next);
            if let Some((rate, rng)) = dropout.as_mut() {
                pre_dropout[l].row_mut(r).copy_from_slice(&next);
                let scale_row = scales[l].row_mut(r);
                if *rate > 0.0 {
                    let keep_scale = 1.0 / (1.0 - *rate);
                    for (value, scale) in next.iter_mut().zip(scale_row.iter_mut()) {
                        *scale = if rng.random::<f64>() < *rate {
                            0.0
                        } else {
                            keep_scale
                        };
                        *value *= *scale;
                    }
                } else {
                    scale_row.fill(1.0);
                }
            }
            hidden[l].row_mut(r).copy_from_slice(&next);
            std::mem::swap(&mut cur, &mut next);
        }
        affine_into(&params.layers[num_hidden], &cur, &mut next);
        logits.row_mut(r).copy_from_slice(&next);
        probs.row_mut(r).copy_from_slice(&softmax(&next));
    }

    Ok(LayerActivations {
        hidden,
        hidden_pre_dropout: pre_dropout,
        dropout_scales: scales,
        logits,
        probs,
    })
}

/// Probabilities for a single sample in evaluation mode.
pub fn predict_probs(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    forward_row_with(params, input, |_, _| {})
}

/// Probabilities for a single sample with dropout active — one stochastic
/// forward pass. `dropout_rate` must be positive (a zero rate would make the
/// pass deterministic; use [`predict_probs`] for that).
pub fn predict_probs_dropout<R: Rng>(
    params: &ModelParams,
    input: &[f64],
    dropout_rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&dropout_rate) || dropout_rate == 0.0 {
        return Err(Error::config(format!(
            "stochastic forward pass needs a dropout rate in (0, 1), got {dropout_rate}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - dropout_rate);
    forward_row_with(params, input, |_, activations| {
        for value in activations.iter_mut() {
            if rng.random::<f64>() < dropout_rate {
                *value = 0.0;
            } else {
                *value *= keep_scale;
            }
        }
    })
}

/// Gradient of the mean cross-entropy loss with respect to one layer's
/// parameters. Same shapes as the corresponding [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Tensor2D,
    pub biases: Vec<f64>,
}

/// Gradients for all layers, in the same order as [`ModelParams::layers`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Tensor2D::zeros(l.fan_in(), l.fan_out()),
                    biases: vec![0.0; l.fan_out()],
                })
                .collect(),
        }
    }
}

/// Exact backpropagation of the mean cross-entropy loss through the
/// activations recorded by a forward pass on `x`.
///
/// The softmax/cross-entropy pair collapses to `probs - onehot(label)` at the
/// logits. Hidden-layer gradients reuse the dropout scales stored in `acts`,
/// so they describe exactly the (possibly stochastic) function the forward
/// pass evaluated. The ReLU derivative at 0 is taken as 0.
pub fn backward(
    params: &ModelParams,
    acts: &LayerActivations,
    x: &Tensor2D,
    labels: &[usize],
) -> Result<Gradients> {
    let n = x.rows();
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{n} input rows but {} labels",
            labels.len()
        )));
    }
    if acts.probs.rows() != n || acts.probs.cols() != params.output_dim() {
        return Err(Error::shape("activations do not match the input batch"));
    }
    if acts.hidden.len() != params.num_hidden() {
        return Err(Error::shape("activations do not match the network depth"));
    }
    let train_mode = !acts.dropout_scales.is_empty();
    if let Some(&bad) = labels.iter().find(|&&l| l >= params.output_dim()) {
        return Err(Error::input(format!(
            "label {bad} out of range for {} classes",
            params.output_dim()
        )));
    }

    let inv_n = 1.0 / n as f64;
    let num_layers = params.num_layers();
    let mut grads = Gradients::zeros_like(params);

    // d(loss)/d(logits), one row per sample, 1/n baked in.
    let mut delta = Tensor2D::zeros(n, params.output_dim());
    for r in 0..n {
        let prow = acts.probs.row(r);
        let drow = delta.row_mut(r);
        for (d, &p) in drow.iter_mut().zip(prow) {
            *d = p * inv_n;
        }
        drow[labels[r]] -= inv_n;
    }

    for l in (0..num_layers).rev() {
        let layer = &params.layers[l];
        let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
        let grad = &mut grads.layers[l];
        for r in 0..n {
            let inrow = if l == 0 {
                x.row(r)
            } else {
                acts.hidden[l - 1].row(r)
            };
            let drow = delta.row(r);
            for (i, &xi) in inrow.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let grow = grad.weights.row_mut(i);
                for (g, &d) in grow.iter_mut().zip(drow) {
                    *g += xi * d;
                }
            }
            for (g, &d) in grad.biases.iter_mut().zip(drow) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous hidden layer through dropout and ReLU.
        let relu_out = if train_mode {
            &acts.hidden_pre_dropout[l - 1]
        } else {
            &acts.hidden[l - 1]
        };
        let mut prev = Tensor2D::zeros(n, fan_in);
        for r in 0..n {
            let drow = delta.row(r);
            let prow = prev.row_mut(r);
            for (i, p) in prow.iter_mut().enumerate() {
                if relu_out.get(r, i) <= 0.0 {
                    continue;
                }
                let wrow = layer.weights.row(i);
                debug_assert_eq!(wrow.len(), fan_out);
                let mut acc = 0.0;
                for (w, d) in wrow.iter().zip(drow) {
                    acc += w * d;
                }
                *p = if train_mode {
                    acc * acts.dropout_scales[l - 1].get(r, i)
                } else {
                    acc
                };
            }
        }
        delta = prev;
    }

    Ok(grads)
}
