use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::MlpModel;

/// `η0 · (1 + 10p)^(-0.75)` for training progress `p ∈ [0, 1]`.
pub fn lr_at(base_lr: f64, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::Argument(format!("progress {progress} outside [0, 1]")));
    }
    if progress == 0.0 {
        return Ok(base_lr);
    }
    Ok(base_lr * (1.0 + 10.0 * progress).powf(-0.75))
}

/// Step counter driving [`lr_at`] across a whole training run.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub step: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            total_steps,
            step: 0,
        }
    }

    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        (self.step as f64 / self.total_steps as f64).min(1.0)
    }

    pub fn current(&self) -> f64 {
        lr_at(self.base_lr, self.progress()).expect("progress is clamped to [0, 1]")
    }

    /// Returns the rate for the current step and advances the counter.
    pub fn next_lr(&mut self) -> f64 {
        let lr = self.current();
        self.step += 1;
        lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-3,
        }
    }
}

/// Momentum buffers for classic (non-Nesterov) SGD with weight decay folded
/// into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    buffers: Vec<Vec<f64>>,
    frozen: Vec<bool>,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, config: SgdConfig) -> Self {
        let params = model.parameters();
        Self {
            config,
            buffers: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            frozen: vec![false; params.len()],
        }
    }

    /// Excludes a parameter (by declaration index) from updates.
    pub fn freeze(&mut self, index: usize) {
        self.frozen[index] = true;
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen[index]
    }

    pub fn buffer(&self, index: usize) -> &[f64] {
        &self.buffers[index]
    }
}

/// `v ← μ·v + g + λ·θ;  θ ← θ − lr·v` for every non-frozen parameter.
pub fn sgd_step(model: &mut MlpModel, state: &mut OptimizerState, grads: &[Tensor], lr: f64) -> Result<()> {
    let n = model.num_parameter_tensors();
    if grads.len() != n || state.buffers.len() != n {
        return Err(Error::State(format!(
            "expected {n} parameter gradients, got {} (optimizer tracks {})",
            grads.len(),
            state.buffers.len()
        )));
    }
    let SgdConfig { momentum, weight_decay } = state.config;
    for (i, (param, grad)) in model.parameters_mut().into_iter().zip(grads).enumerate() {
        if state.frozen[i] {
            continue;
        }
        if grad.shape() != param.shape() {
            return Err(Error::State(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let buf = &mut state.buffers[i];
        for ((theta, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(buf.iter_mut()) {
            *v = momentum * *v + g + weight_decay * *theta;
            *theta -= lr * *v;
        }
    }
    Ok(())
}
