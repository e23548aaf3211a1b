//! Adam with bias correction, one state per stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{same_shapes, Gradients, ModelDims, ParamTensors, StreamModel, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(dims: ModelDims, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: Gradients::zeros(dims),
            second_moment: Gradients::zeros(dims),
        }
    }

    /// One Adam step. Non-finite gradients reject the whole update and leave
    /// both the model and the state untouched.
    pub fn apply(&mut self, model: &mut StreamModel, grads: &Gradients) -> Result<()> {
        if !same_shapes(model, grads) || !same_shapes(model, &self.first_moment) {
            return Err(Error::InvalidArgument(
                "gradient/optimizer shapes do not match the model".into(),
            ));
        }
        for (name, g) in TENSOR_NAMES.iter().zip(grads.tensors()) {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: name,
                    index,
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        let params = model.tensors_mut();
        let firsts = self.first_moment.tensors_mut();
        let seconds = self.second_moment.tensors_mut();
        for (((p, m), v), g) in params
            .into_iter()
            .zip(firsts)
            .zip(seconds)
            .zip(grads.tensors())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                if m[i] == 0.0 {
                    continue;
                }
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
