//! AdamW with decoupled weight decay, plus the piecewise-constant/cosine
//! learning-rate schedule the training runs use.

use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

/// Peak learning rate; the schedule decays from here to zero.
pub const PEAK_LR: f64 = 1e-4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptimError {
    #[error("parameter {index}: gradient shape {grad:?} does not match parameter {param:?}")]
    ShapeMismatch {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("optimizer state tracks {state} tensors, got {given}")]
    StateMismatch { state: usize, given: usize },
}

/// Optimizer hyperparameters. Weight decay is decoupled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip, applied before the moment update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

/// First/second moment buffers and the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new_like(params: &[&Tensor<T>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One AdamW update over a parameter list. Gradients may be `None` for
/// parameters that received no signal this step (treated as zero).
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    hp: &AdamWParams,
    lr: f64,
) -> Result<(), OptimError> {
    if state.m.len() != params.len() || grads.len() != params.len() {
        return Err(OptimError::StateMismatch {
            state: state.m.len(),
            given: params.len().max(grads.len()),
        });
    }
    for (i, p) in params.iter().enumerate() {
        if let Some(g) = &grads[i] {
            if g.shape() != p.shape() {
                return Err(OptimError::ShapeMismatch {
                    index: i,
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
        }
    }

    let clip_scale: f64 = match hp.clip_norm {
        Some(c) => {
            let norm = grads
                .iter()
                .flatten()
                .map(|g| g.sq_norm())
                .sum::<f64>()
                .sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one_m_b1 = T::from_f64((1.0 - hp.beta1) * clip_scale);
    let one_m_b2 = T::from_f64(1.0 - hp.beta2);
    let clip_t = T::from_f64(clip_scale);
    let decay = T::from_f64(1.0 - lr * hp.weight_decay);
    let step_size = T::from_f64(lr / bc1);
    let denom_scale = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(hp.eps);

    for (i, p) in params.iter_mut().enumerate() {
        // Decoupled weight decay first, then the Adam moment update.
        if hp.weight_decay != 0.0 {
            p.scale_assign(decay);
        }
        let Some(g) = &grads[i] else { continue };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for j in 0..pd.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_m_b1 * gj;
            let gc = gj * clip_t;
            v[j] = b2 * v[j] + one_m_b2 * gc * gc;
            let denom = v[j].sqrt() * denom_scale + eps;
            pd[j] -= step_size * m[j] / denom;
        }
    }
    Ok(())
}

/// Learning rate at `step`: the peak until `decay_start`, then a cosine
/// ramp to zero at `total_steps`.
pub fn cosine_lr(step: u64, decay_start: u64, total_steps: u64) -> f64 {
    if step < decay_start || total_steps <= decay_start {
        return PEAK_LR;
    }
    let p = ((step - decay_start) as f64 / (total_steps - decay_start) as f64).min(1.0);
    PEAK_LR * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}
