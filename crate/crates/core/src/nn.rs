//! Dense layers, activations, softmax and cross-entropy.
//!
//! Gradients for the full classifier (both head kinds) live in
//! [`crate::model`]; this module provides the building blocks and their
//! local derivative rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Floor for probabilities entering a logarithm. Keeps saturated
/// predictions from producing infinite loss.
pub const LOG_PROB_EPSILON: f64 = 1e-12;

/// Elementwise activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn grad_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Elementwise `max(0, x)` over a matrix.
pub fn relu<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| Activation::Relu.apply(v))
}

/// A dense affine layer: weights `out x in`, bias `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S = f64> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![S::zero(); out_dim],
        }
    }

    /// He-style fan-in uniform init: weights from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, bias zero.
    pub fn he_init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| S::from_f64_c(rng.next_range(-limit, limit)))
            .collect();
        DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("finite init"),
            bias: vec![S::zero(); out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `out[b][o] = sum_j weights[o][j] * x[b][j] + bias[o]`.
    pub fn forward(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.in_dim() {
            return Err(Error::DimMismatch {
                context: "dense_forward",
                expected: format!("input cols == {} (layer in-dim)", self.in_dim()),
                got: format!("{}x{}", x.rows(), x.cols()),
            });
        }
        let mut out = x.matmul_nt(&self.weights)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, &b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Stable softmax of one logit vector at the given temperature.
///
/// Computed as `exp((z_i - max)/t) / sum_j exp((z_j - max)/t)`; the output
/// sums to one and every entry is strictly inside `(0, 1)` for finite
/// inputs of length >= 2.
pub fn softmax<S: Scalar>(logits: &[S], temperature: S) -> Result<Vec<S>> {
    if temperature <= S::zero() {
        return Err(Error::InvalidParameter {
            name: "temperature",
            message: format!("must be > 0, got {temperature}"),
        });
    }
    if logits.is_empty() {
        return Err(Error::InvalidParameter {
            name: "logits",
            message: "softmax of an empty vector".into(),
        });
    }
    let max = logits.iter().copied().fold(logits[0], S::max);
    let mut out: Vec<S> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Row-wise log-softmax at the given temperature; the stable route for
/// probability ratios.
pub fn log_softmax<S: Scalar>(logits: &[S], temperature: S) -> Result<Vec<S>> {
    if temperature <= S::zero() {
        return Err(Error::InvalidParameter {
            name: "temperature",
            message: format!("must be > 0, got {temperature}"),
        });
    }
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let scaled: Vec<S> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let log_z = scaled.iter().map(|&x| x.exp()).sum::<S>().ln();
    Ok(scaled.into_iter().map(|x| x - log_z).collect())
}

/// Softmax applied to every row of a matrix.
pub fn softmax_rows<S: Scalar>(logits: &Matrix<S>, temperature: S) -> Result<Matrix<S>> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = softmax(logits.row(r), temperature)?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Cross-entropy `-sum_i target_i * ln(probs_i)`.
///
/// The target is a non-negative weight vector and need not sum to one
/// (drift regularization stacks an auxiliary label on top of the one-hot
/// label). Probabilities are clamped at [`LOG_PROB_EPSILON`] before the
/// logarithm.
pub fn cross_entropy<S: Scalar>(probs: &[S], target: &[S]) -> Result<S> {
    if probs.len() != target.len() {
        return Err(Error::DimMismatch {
            context: "cross_entropy",
            expected: format!("{} probabilities", probs.len()),
            got: format!("{} target weights", target.len()),
        });
    }
    let eps = S::from_f64_c(LOG_PROB_EPSILON);
    let mut acc = S::zero();
    for (&p, &t) in probs.iter().zip(target) {
        if t == S::zero() {
            continue;
        }
        acc -= t * p.max(eps).ln();
    }
    Ok(acc)
}
