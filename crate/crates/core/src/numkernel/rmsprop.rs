use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Running mean-square state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    acc: Tensor,
    pub rho: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl RmsPropState {
    pub fn new(shape: &[usize], rho: f64, epsilon: f64, lr: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("rmsprop rho must lie in (0, 1), got {rho}")));
        }
        if epsilon < 0.0 || !epsilon.is_finite() {
            return Err(Error::Config(format!("rmsprop epsilon must be >= 0, got {epsilon}")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self { acc: Tensor::zeros(shape), rho, epsilon, lr })
    }

    pub fn accumulator(&self) -> &Tensor {
        &self.acc
    }
}

/// `acc ← ρ·acc + (1−ρ)·g²`, `param ← param − lr·g/√(acc+ε)`.
pub fn rmsprop_update(param: &mut Tensor, grad: &Tensor, state: &mut RmsPropState) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.acc.shape() {
        return Err(Error::Shape(format!(
            "rmsprop: param {:?}, grad {:?}, acc {:?}",
            param.shape(),
            grad.shape(),
            state.acc.shape()
        )));
    }
    let (rho, eps, lr) = (state.rho, state.epsilon, state.lr);
    for ((p, &g), a) in param
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(state.acc.values_mut())
    {
        *a = rho * *a + (1.0 - rho) * g * g;
        if g != 0.0 {
            *p -= lr * g / (*a + eps).sqrt();
        }
    }
    Ok(())
}

/// RMSProp over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct RmsProp {
    states: Vec<RmsPropState>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, rho: f64, epsilon: f64, lr: f64) -> Result<Self> {
        let states = store
            .iter()
            .map(|(_, _, t)| RmsPropState::new(t.shape(), rho, epsilon, lr))
            .collect::<Result<_>>()?;
        Ok(Self { states })
    }

    pub fn set_lr(&mut self, lr: f64) {
        for s in &mut self.states {
            s.lr = lr;
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.states.len() != store.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        for (id, state) in store.ids().zip(self.states.iter_mut()) {
            rmsprop_update(store.get_mut(id), grads.get(id), state)?;
        }
        Ok(())
    }
}
