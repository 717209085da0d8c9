//! Drift estimation and drift regularization.
//!
//! The drift of a client on one input is the per-class log-probability
//! gap between its previous-round local model and the current global
//! model. Softmaxing the negated drift yields an auxiliary label that
//! steers local training against the drift direction; adding the plain
//! cross-entropy gives the regularized local objective.

use crate::error::{Error, Result};
use crate::model::one_hot;
use crate::nn::{cross_entropy, log_softmax, softmax};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Per-example drift values and the auxiliary label derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRecord<S = f64> {
    /// Per-class drift: `ln softmax(prev_local) - ln softmax(global)`.
    pub drift: Vec<S>,
    /// `softmax(-drift)`: a probability vector, entries in (0, 1).
    pub aux_label: Vec<S>,
}

impl<S: Scalar> DriftRecord<S> {
    pub fn from_logits(
        logits_prev_local: &[S],
        logits_global: &[S],
        temperature: S,
    ) -> Result<Self> {
        let drift = estimate_drift(logits_prev_local, logits_global, temperature)?;
        let aux_label = drift_to_aux_label(&drift)?;
        Ok(DriftRecord { drift, aux_label })
    }
}

/// Per-class drift `ln sigma(f_P)_i - ln sigma(f_G)_i`, with both softmaxes
/// taken at the given temperature.
///
/// Both logit vectors must come from margin-free forward passes on the
/// same input.
pub fn estimate_drift<S: Scalar>(
    logits_prev_local: &[S],
    logits_global: &[S],
    temperature: S,
) -> Result<Vec<S>> {
    if logits_prev_local.len() != logits_global.len() {
        return Err(Error::DimMismatch {
            context: "estimate_drift",
            expected: format!("{} classes", logits_prev_local.len()),
            got: format!("{} classes", logits_global.len()),
        });
    }
    let lp = log_softmax(logits_prev_local, temperature)?;
    let lg = log_softmax(logits_global, temperature)?;
    Ok(lp.into_iter().zip(lg).map(|(p, g)| p - g).collect())
}

/// Auxiliary label `softmax(-drift)` at unit temperature.
pub fn drift_to_aux_label<S: Scalar>(drift: &[S]) -> Result<Vec<S>> {
    drift_to_aux_label_with_temperature(drift, S::one())
}

/// Auxiliary label at an explicit temperature; unit temperature is the
/// published form.
pub fn drift_to_aux_label_with_temperature<S: Scalar>(
    drift: &[S],
    temperature: S,
) -> Result<Vec<S>> {
    if let Some(bad) = drift.iter().position(|d| !d.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite drift entry at index {bad}"
        )));
    }
    let negated: Vec<S> = drift.iter().map(|&d| -d).collect();
    softmax(&negated, temperature)
}

/// The regularized local loss for one example:
/// cross-entropy against the one-hot label plus cross-entropy against the
/// auxiliary label, both over `softmax(train_logits)`.
pub fn lfd_loss<S: Scalar>(train_logits: &[S], label: usize, aux_label: &[S]) -> Result<S> {
    let classes = train_logits.len();
    if label >= classes {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    if aux_label.len() != classes {
        return Err(Error::DimMismatch {
            context: "lfd_loss",
            expected: format!("{classes} aux-label entries"),
            got: format!("{}", aux_label.len()),
        });
    }
    let probs = softmax(train_logits, S::one())?;
    let mut hot = vec![S::zero(); classes];
    hot[label] = S::one();
    Ok(cross_entropy(&probs, &hot)? + cross_entropy(&probs, aux_label)?)
}

/// Batch targets for the regularized objective: `one_hot(labels) + aux`,
/// row per example. Feeding these to [`crate::model::ClassifierModel::backward`]
/// reproduces the sum of the two cross-entropy terms.
pub fn lfd_targets<S: Scalar>(labels: &[usize], aux: &Matrix<S>) -> Result<Matrix<S>> {
    if labels.len() != aux.rows() {
        return Err(Error::DimMismatch {
            context: "lfd_targets",
            expected: format!("{} label rows", aux.rows()),
            got: format!("{}", labels.len()),
        });
    }
    let mut targets = one_hot::<S>(labels, aux.cols())?;
    for (t, &a) in targets.as_mut_slice().iter_mut().zip(aux.as_slice()) {
        *t += a;
    }
    Ok(targets)
}

/// Batch drift: row-wise [`estimate_drift`] over two logit matrices.
pub fn estimate_drift_batch<S: Scalar>(
    logits_prev_local: &Matrix<S>,
    logits_global: &Matrix<S>,
    temperature: S,
) -> Result<Matrix<S>> {
    if logits_prev_local.rows() != logits_global.rows()
        || logits_prev_local.cols() != logits_global.cols()
    {
        return Err(Error::DimMismatch {
            context: "estimate_drift_batch",
            expected: format!(
                "{}x{}",
                logits_prev_local.rows(),
                logits_prev_local.cols()
            ),
            got: format!("{}x{}", logits_global.rows(), logits_global.cols()),
        });
    }
    let mut out = logits_prev_local.clone();
    for r in 0..out.rows() {
        let row = estimate_drift(logits_prev_local.row(r), logits_global.row(r), temperature)?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Batch auxiliary labels: row-wise softmax of the negated drift.
pub fn aux_labels_batch<S: Scalar>(drift: &Matrix<S>) -> Result<Matrix<S>> {
    let mut out = drift.clone();
    for r in 0..out.rows() {
        let row = drift_to_aux_label(drift.row(r))?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}
