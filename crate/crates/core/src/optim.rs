//! Adam with L2 weight decay.

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2: added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Rejects non-finite gradients before any
    /// state is touched, so a failed step leaves parameters and moments
    /// untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient layers for {} parameter layers",
                grads.layers.len(),
                params.layers.len()
            )));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((layer, grad), (m, v)) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(&mut self.v.layers))
        {
            let params_iter = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let grads_iter = grad.weight.iter().chain(grad.bias.iter());
            let m_iter = m.weight.iter_mut().chain(m.bias.iter_mut());
            let v_iter = v.weight.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), mi), vi) in params_iter.zip(grads_iter).zip(m_iter).zip(v_iter) {
                let g = g + c.weight_decay * *p;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
