//! Adam optimiser with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::nn::{Gradients, ModelParams};

/// Adam hyperparameters. Defaults: learning rate 1e-3, beta1 0.9,
/// beta2 0.999, epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Optimiser state: step counter plus first and second moment estimates,
/// shaped like the parameters they optimise. Second moments never go
/// negative because they accumulate squared gradients.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    /// Fresh state (step 0, zero moments) for `params`.
    pub fn new(params: &ModelParams, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }
}

/// Applies one Adam update in place:
///
/// ```text
/// m <- b1 m + (1-b1) g        m_hat = m / (1 - b1^t)
/// v <- b2 v + (1-b2) g^2      v_hat = v / (1 - b2^t)
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
///
/// A zero gradient therefore leaves parameters exactly unchanged on the
/// first step.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != params.layers().len() {
        return Err(Error::shape(
            "gradient layer count does not match parameters",
        ));
    }
    for (layer, grad) in params.layers().iter().zip(&grads.layers) {
        if layer.weights.rows() != grad.weights.rows()
            || layer.weights.cols() != grad.weights.cols()
            || layer.biases.len() != grad.biases.len()
        {
            return Err(Error::shape("gradient shape does not match parameters"));
        }
    }

    let t = state.step + 1;
    let cfg = state.config;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);

    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    };

    for (l, grad) in grads.layers.iter().enumerate() {
        let m = &mut state.m.layers[l];
        let v = &mut state.v.layers[l];
        let layer = &mut params.layers_mut()[l];
        for (((theta, &g), m), v) in layer
            .weights
            .values_mut()
            .iter_mut()
            .zip(grad.weights.values())
            .zip(m.weights.values_mut().iter_mut())
            .zip(v.weights.values_mut().iter_mut())
        {
            update(theta, g, m, v);
        }
        for (((theta, &g), m), v) in layer
            .biases
            .iter_mut()
            .zip(&grad.biases)
            .zip(m.biases.iter_mut())
            .zip(v.biases.iter_mut())
        {
            update(theta, g, m, v);
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ArchitectureSpec, DenseLayer};
    use crate::tensor::Tensor2D;

    fn tiny_params() -> ModelParams {
        ModelParams::new(vec![
            DenseLayer::new(Tensor2D::new(1, 1, vec![1.0]).unwrap(), vec![0.0]).unwrap(),
            DenseLayer::new(
                Tensor2D::new(1, 2, vec![0.5, -0.5]).unwrap(),
                vec![0.0, 0.0],
            )
            .unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = tiny_params();
        let before = params.flatten();
        let grads = Gradients::zeros_like(&params);
        let mut state = AdamState::new(&params, AdamConfig::default()).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.flatten(), before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut params = tiny_params();
        let mut grads = Gradients::zeros_like(&params);
        grads.layers[0].weights.set(0, 0, 1.0);
        let mut state = AdamState::new(&params, AdamConfig::default()).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        // m_hat = g, v_hat = g^2, so the update is lr * 1 / (1 + eps).
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((params.layer(0).weights.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn updates_are_deterministic() {
        let arch = ArchitectureSpec::new(3, vec![4], 2, 0.0, 1).unwrap();
        let run = || {
            let mut params = init_params(&arch, 5);
            let mut grads = Gradients::zeros_like(&params);
            for (i, g) in grads.layers[0].weights.values_mut().iter_mut().enumerate() {
                *g = (i as f64 * 0.37).sin();
            }
            let mut state = AdamState::new(&params, AdamConfig::default()).unwrap();
            for _ in 0..10 {
                adam_step(&mut params, &grads, &mut state).unwrap();
            }
            params.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let params = tiny_params();
        let bad = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&params, bad).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&params, bad).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = tiny_params();
        let other = init_params(&ArchitectureSpec::new(3, vec![4], 2, 0.0, 1).unwrap(), 0);
        let grads = Gradients::zeros_like(&other);
        let mut state = AdamState::new(&params, AdamConfig::default()).unwrap();
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }
}
