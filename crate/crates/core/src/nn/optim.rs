//! SGD with momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// `v ← μ·v − η·(g + λ·w); w ← w + v`, with `λ` applied only when `decay` is set.
pub fn sgd_momentum_step<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], hp: &SgdParams, decay: bool) {
    assert!(w.len() == v.len() && w.len() == g.len(), "sgd: buffer lengths differ");
    let lr = T::of(hp.lr);
    let mu = T::of(hp.momentum);
    let wd = T::of(if decay { hp.weight_decay } else { 0.0 });
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi - lr * (gi + wd * *wi);
        *wi += *vi;
    }
}

/// A mutable view of one learnable tensor.
pub struct ParamMut<'a, T: Scalar> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub is_bias: bool,
}

/// Momentum optimizer state: one zero-initialised velocity buffer per tensor.
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar> {
    pub params: SgdParams,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: SgdParams, shapes: &[Vec<usize>]) -> Self {
        Sgd {
            params,
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, params: Vec<ParamMut<'_, T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "sgd: {} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((p, v), g) in params.into_iter().zip(&mut self.velocity).zip(grads) {
            if p.value.shape() != g.shape() || v.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "sgd: {} has shape {:?}, gradient {:?}",
                    p.name,
                    p.value.shape(),
                    g.shape()
                )));
            }
            sgd_momentum_step(p.value.data_mut(), v.data_mut(), g.data(), &self.params, !p.is_bias);
        }
        Ok(())
    }
}
