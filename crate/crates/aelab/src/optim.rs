//! Trainable parameters, the Adam optimizer, and the piecewise learning
//! rate schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Scalar, Tensor};

/// A named tensor with an optional gradient slot.
///
/// When `trainable` is false the value is bit-identical before and after
/// any optimizer step (used for frozen-latent experiments).
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
    /// Tape variable from the most recent forward pass.
    pub tape_var: Option<Var>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
            trainable: true,
            tape_var: None,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut p = Self::new(name, value);
        p.trainable = false;
        p
    }
}

/// Adam defaults; the reference only names the optimizer.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment estimates keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            moments: HashMap::new(),
        }
    }
}

/// One Adam update with bias correction over `params`.
///
/// Non-trainable parameters are untouched (value and moments alike).
/// A trainable parameter without a populated gradient is an error.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Parameter<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let eps = T::from_f64(state.eps);
    let bc1 = T::one() - T::from_f64(state.beta1.powi(t));
    let bc2 = T::one() - T::from_f64(state.beta2.powi(t));
    let lr_t = T::from_f64(lr);
    for p in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing gradient for parameter '{}'", p.name)))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} != value shape {:?} for '{}'",
                g.shape(),
                p.value.shape(),
                p.name
            )));
        }
        let (m, v) = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
        for i in 0..g.numel() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
            let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            p.value.data_mut()[i] = p.value.data()[i] - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Learning rate for a 0-based epoch in a 100-epoch run: one warmup
/// epoch at 1e-4, then 1e-3 / 1e-4 / 1e-5 with the decayed rates first
/// applying at epochs 33 and 66.
pub fn lr_at_epoch(epoch: usize) -> Result<f64> {
    match epoch {
        0 => Ok(1e-4),
        1..=32 => Ok(1e-3),
        33..=65 => Ok(1e-4),
        66..=99 => Ok(1e-5),
        _ => Err(Error::Config(format!("epoch {epoch} out of schedule range 0..100"))),
    }
}
