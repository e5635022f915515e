//! SGD and Adam over flat parameter vectors.
//!
//! Training code flattens whatever it optimizes (MLP weights, and in the
//! learnable-structure head also edge logits) into one vector, so a single
//! state type serves every phase.

use crate::error::{Error, Result};

/// Which update rule to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam(0.9, 0.999, 1e-8).
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the step counter. SGD keeps the
/// moment vectors empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimState { step: 0, m: Vec::new(), v: Vec::new() },
            OptimizerKind::Adam { .. } => {
                OptimState { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
            }
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// One in-place update of `params` from `grads`. Deterministic: a fixed
/// (params, grads, state) triple always produces the same result.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    kind: OptimizerKind,
    learning_rate: f64,
) -> Result<()> {
    if learning_rate <= 0.0 {
        return Err(Error::Domain(format!("learning rate {} must be > 0", learning_rate)));
    }
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    match kind {
        OptimizerKind::Sgd => {
            for (p, &g) in params.iter_mut().zip(grads) {
                *p -= learning_rate * g;
            }
            state.step += 1;
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if state.m.len() != params.len() {
                return Err(Error::Shape(format!(
                    "optimizer state holds {} moments for {} params",
                    state.m.len(),
                    params.len()
                )));
            }
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                let g = grads[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
