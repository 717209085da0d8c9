//! SGD with momentum and weight decay.
//!
//! Parameters and gradients travel as slices in the model's canonical
//! flat order (see [`crate::model::ClassifierModel::param_slices`]); the
//! velocity buffer mirrors that order exactly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimizer state for one local optimization.
///
/// Update rule per coordinate:
/// `v = momentum * v + grad + weight_decay * param`,
/// `param = param - learning_rate * v`.
///
/// Weight decay acts on the raw parameters; for the cosine head this means
/// the classifier weights decay before normalization.
#[derive(Debug, Clone)]
pub struct SgdState<S = f64> {
    pub learning_rate: S,
    pub momentum: S,
    pub weight_decay: S,
    velocity: Vec<S>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(learning_rate: S, momentum: S, weight_decay: S, param_count: usize) -> Result<Self> {
        if learning_rate <= S::zero() || learning_rate.is_nan() {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                message: format!("must be > 0, got {learning_rate}"),
            });
        }
        if momentum < S::zero() || momentum >= S::one() {
            return Err(Error::InvalidParameter {
                name: "momentum",
                message: format!("must be in [0, 1), got {momentum}"),
            });
        }
        if weight_decay < S::zero() {
            return Err(Error::InvalidParameter {
                name: "weight_decay",
                message: format!("must be >= 0, got {weight_decay}"),
            });
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: vec![S::zero(); param_count],
        })
    }

    pub fn param_count(&self) -> usize {
        self.velocity.len()
    }

    /// Apply one update step. `params` are the model's parameter slices in
    /// canonical order; `grads` is the flat gradient of the same length.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[S]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != grads.len() || total != self.velocity.len() {
            return Err(Error::DimMismatch {
                context: "sgd_step",
                expected: format!("{} parameters", self.velocity.len()),
                got: format!("{total} params / {} grads", grads.len()),
            });
        }
        let mut offset = 0;
        for slice in params.iter_mut() {
            let n = slice.len();
            let g = &grads[offset..offset + n];
            let v = &mut self.velocity[offset..offset + n];
            for i in 0..n {
                let p = slice[i];
                v[i] = self.momentum * v[i] + g[i] + self.weight_decay * p;
                slice[i] = p - self.learning_rate * v[i];
            }
            offset += n;
        }
        Ok(())
    }
}
