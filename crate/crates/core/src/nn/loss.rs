//! Summed per-pixel binary cross entropy.

use crate::error::{Error, Result};
use crate::nn::layers::SIGMOID_EPS;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct LossReport<T: Scalar> {
    /// Total cross entropy, summed over examples and pixels (not averaged).
    pub value: f64,
    /// ∂L/∂m̂, same shape as the prediction.
    pub grad: Tensor<T>,
}

fn check<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(pos) = target.data().iter().position(|&m| m != T::ZERO && m != T::ONE) {
        return Err(Error::invalid(format!(
            "target value {} at index {pos} is not binary",
            target.data()[pos]
        )));
    }
    Ok(())
}

fn clamp_f64(p: f64) -> f64 {
    p.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// Individual terms `−(m log m̂ + (1−m) log(1−m̂))` in f64, one per element.
pub fn cross_entropy_terms<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>> {
    check(pred, target)?;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &m)| {
            let p = clamp_f64(p.to_f64());
            if m == T::ONE {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .collect())
}

/// `L = −Σₙ Σₚ (mₚ log m̂ₚ + (1−mₚ) log(1−m̂ₚ))` and its gradient
/// `∂L/∂m̂ₚ = −mₚ/m̂ₚ + (1−mₚ)/(1−m̂ₚ)`.
pub fn cross_entropy_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossReport<T>> {
    let terms = cross_entropy_terms(pred, target)?;
    let value = terms.iter().sum();
    let lo = T::of(SIGMOID_EPS);
    let hi = T::of(1.0 - SIGMOID_EPS);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &m)| {
            let p = p.max(lo).min(hi);
            if m == T::ONE {
                -T::ONE / p
            } else {
                T::ONE / (T::ONE - p)
            }
        })
        .collect();
    Ok(LossReport {
        value,
        grad: Tensor::from_vec(pred.shape(), grad)?,
    })
}
