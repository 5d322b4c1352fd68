use std::collections::BTreeMap;

use super::{GradStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub shape: Vec<usize>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            shape: shape.to_vec(),
            t: 0,
        }
    }

    /// One bias-corrected update; returns the new parameter as a fresh leaf
    /// that requires gradients.
    pub fn step(&mut self, param: &Tensor<T>, grad: &Tensor<T>, cfg: &AdamConfig) -> Result<Tensor<T>> {
        if param.shape() != self.shape.as_slice() || grad.shape() != param.shape() {
            return Err(Error::contract(format!(
                "adam: state {:?}, parameter {:?}, gradient {:?} disagree",
                self.shape,
                param.shape(),
                grad.shape()
            )));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        let t = self.t as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let mut out = param.to_vec();
        for (i, (p, &g)) in out.iter_mut().zip(grad.data()).enumerate() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(Tensor::from_vec(out, param.shape())?.requires_grad_(true))
    }
}

/// Adam over a set of named parameters.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub states: BTreeMap<String, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)], grads: &GradStore<T>) -> Result<()> {
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(p) else { continue };
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(p.shape()));
            **p = state.step(p, g, &self.config)?;
        }
        Ok(())
    }
}
