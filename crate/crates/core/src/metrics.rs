//! Evaluation and diagnostics: accuracy, prediction-divergence (KL)
//! traces, linear CKA similarity, and the learning-performance (LP)
//! forgetting score.
//!
//! Everything here is a pure function of models and datasets.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{local_optimize_with_epochs, ClientState, StrategyConfig};
use crate::model::ClassifierModel;
use crate::nn::softmax_rows;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Direction of the per-client prediction-divergence measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    /// `KL(local || global)`: how far the local model drifted.
    LocalToGlobal,
    GlobalToLocal,
}

/// Per-round evaluation snapshot.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub global_test_accuracy: f64,
    pub per_client: BTreeMap<usize, ClientRoundMetrics>,
    pub elapsed_seconds: f64,
}

/// Diagnostics for one active client in one round, all measured against
/// the global model the client started from.
#[derive(Debug, Clone)]
pub struct ClientRoundMetrics {
    pub local_accuracy: f64,
    pub mean_kl_to_global: Option<f64>,
    pub cka_logits: Option<f64>,
    pub lp_existing: Option<f64>,
    pub lp_absent: Option<f64>,
    /// Classes dropped from the LP means because the global model scored
    /// zero on them.
    pub lp_excluded: usize,
}

impl RoundRecord {
    pub fn mean_client_kl(&self) -> Option<f64> {
        mean_of(self.per_client.values().filter_map(|m| m.mean_kl_to_global))
    }

    pub fn mean_client_cka(&self) -> Option<f64> {
        mean_of(self.per_client.values().filter_map(|m| m.cka_logits))
    }

    pub fn mean_lp_existing(&self) -> Option<f64> {
        mean_of(self.per_client.values().filter_map(|m| m.lp_existing))
    }

    pub fn mean_lp_absent(&self) -> Option<f64> {
        mean_of(self.per_client.values().filter_map(|m| m.lp_absent))
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Argmax class per row; ties resolve to the lowest class index.
pub fn predictions<S: Scalar>(logits: &Matrix<S>) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy_from_predictions(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Fraction of examples whose argmax inference logit equals the label.
pub fn top1_accuracy<S: Scalar>(model: &ClassifierModel<S>, dataset: &Dataset<S>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Metric("accuracy of an empty dataset".into()));
    }
    let logits = model.inference_logits(dataset.features())?;
    Ok(accuracy_from_predictions(&predictions(&logits), dataset.labels()))
}

/// Per-class accuracy; `None` for classes with no examples in `labels`.
pub fn per_class_accuracy_from_predictions(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Vec<Option<f64>> {
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    correct
        .into_iter()
        .zip(total)
        .map(|(c, t)| (t > 0).then(|| c as f64 / t as f64))
        .collect()
}

/// `KL(p || q) = sum_i p_i ln(p_i / q_i)` for two strictly positive
/// distributions.
pub fn kl_divergence<S: Scalar>(p: &[S], q: &[S]) -> Result<S> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            context: "kl_divergence",
            expected: format!("{} entries", p.len()),
            got: format!("{}", q.len()),
        });
    }
    let mut acc = S::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > S::zero() {
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc)
}

/// Mean KL over `dataset` between the two models' softmax predictions at
/// the given temperature.
pub fn mean_kl<S: Scalar>(
    model_p: &ClassifierModel<S>,
    model_q: &ClassifierModel<S>,
    dataset: &Dataset<S>,
    temperature: S,
) -> Result<f64> {
    if model_p.num_classes() != model_q.num_classes() {
        return Err(Error::DimMismatch {
            context: "mean_kl",
            expected: format!("{} classes", model_p.num_classes()),
            got: format!("{}", model_q.num_classes()),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Metric("mean KL over an empty dataset".into()));
    }
    let lp = model_p.inference_logits(dataset.features())?;
    let lq = model_q.inference_logits(dataset.features())?;
    mean_kl_from_logits(&lp, &lq, temperature)
}

pub fn mean_kl_from_logits<S: Scalar>(
    logits_p: &Matrix<S>,
    logits_q: &Matrix<S>,
    temperature: S,
) -> Result<f64> {
    let p = softmax_rows(logits_p, temperature)?;
    let q = softmax_rows(logits_q, temperature)?;
    let mut total = S::zero();
    for (p_row, q_row) in p.iter_rows().zip(q.iter_rows()) {
        total += kl_divergence(p_row, q_row)?;
    }
    Ok(total.as_f64() / p.rows() as f64)
}

/// Linear CKA between two representations of the same `n` examples:
/// `|X'Y|_F^2 / (|X'X|_F * |Y'Y|_F)` with column-centered `X`, `Y`.
pub fn linear_cka<S: Scalar>(x: &Matrix<S>, y: &Matrix<S>) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::DimMismatch {
            context: "linear_cka",
            expected: format!("{} rows", x.rows()),
            got: format!("{}", y.rows()),
        });
    }
    if x.rows() < 2 {
        return Err(Error::Metric("CKA needs at least two examples".into()));
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    let cross = xc.matmul_tn(&yc)?.frobenius_norm();
    let self_x = xc.matmul_tn(&xc)?.frobenius_norm();
    let self_y = yc.matmul_tn(&yc)?.frobenius_norm();
    if self_x == S::zero() || self_y == S::zero() {
        return Err(Error::Metric(
            "CKA undefined for zero-variance input (all rows identical)".into(),
        ));
    }
    Ok((cross * cross / (self_x * self_y)).as_f64())
}

/// Learning-performance score with its exclusion count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpScore {
    /// Mean over the retained classes of local/global per-class accuracy.
    pub value: f64,
    /// Classes dropped because the global model's accuracy there is zero.
    pub excluded: usize,
}

/// Mean over `class_subset` of `acc(local, class) / acc(global, class)`
/// on the test set. Classes where the global accuracy is zero are dropped
/// from the mean and counted in `excluded`.
pub fn learning_performance<S: Scalar>(
    test_set: &Dataset<S>,
    local_model: &ClassifierModel<S>,
    global_model: &ClassifierModel<S>,
    class_subset: &[usize],
) -> Result<LpScore> {
    let local_logits = local_model.inference_logits(test_set.features())?;
    let global_logits = global_model.inference_logits(test_set.features())?;
    lp_from_predictions(
        &predictions(&local_logits),
        &predictions(&global_logits),
        test_set.labels(),
        test_set.num_classes(),
        class_subset,
    )
}

pub fn lp_from_predictions(
    local_preds: &[usize],
    global_preds: &[usize],
    labels: &[usize],
    num_classes: usize,
    class_subset: &[usize],
) -> Result<LpScore> {
    if class_subset.is_empty() {
        return Err(Error::Metric("LP over an empty class subset".into()));
    }
    let local = per_class_accuracy_from_predictions(local_preds, labels, num_classes);
    let global = per_class_accuracy_from_predictions(global_preds, labels, num_classes);
    let mut sum = 0.0;
    let mut kept = 0usize;
    let mut excluded = 0usize;
    for &class in class_subset {
        if class >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                num_classes,
            });
        }
        let (Some(l), Some(g)) = (local[class], global[class]) else {
            return Err(Error::Metric(format!(
                "test set has no examples of class {class}"
            )));
        };
        if g == 0.0 {
            excluded += 1;
            continue;
        }
        sum += l / g;
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::Metric(
            "every class in the subset has zero global accuracy".into(),
        ));
    }
    Ok(LpScore {
        value: sum / kept as f64,
        excluded,
    })
}

/// One point of a local-optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    /// 0 is the pre-training state; `e` the state after epoch `e`.
    pub epoch: usize,
    pub kl: f64,
    pub cka: f64,
    pub acc_existing: Option<f64>,
    pub acc_absent: Option<f64>,
}

/// Run one client's local optimization, recording divergence from the
/// frozen global model on `probe_set` before training and after every
/// epoch. Returns the trained model and `local_epochs + 1` trace points.
pub fn trace_local_optimization<S: Scalar>(
    client: &ClientState<S>,
    global_model: &ClassifierModel<S>,
    cfg: &StrategyConfig,
    round: usize,
    probe_set: &Dataset<S>,
) -> Result<(ClassifierModel<S>, Vec<TracePoint>)> {
    if probe_set.is_empty() {
        return Err(Error::Metric("empty probe set".into()));
    }
    let existing = client.shard.classes_present();
    let absent: Vec<usize> = (0..probe_set.num_classes())
        .filter(|c| !existing.contains(c))
        .collect();
    let global_logits = global_model.inference_logits(probe_set.features())?;

    let mut trace = Vec::with_capacity(cfg.local_epochs + 1);
    let trained = local_optimize_with_epochs(client, global_model, cfg, round, |epoch, model| {
        let logits = model.inference_logits(probe_set.features())?;
        let kl = mean_kl_from_logits(&logits, &global_logits, S::one())?;
        let cka = linear_cka(&logits, &global_logits)?;
        let preds = predictions(&logits);
        let per_class =
            per_class_accuracy_from_predictions(&preds, probe_set.labels(), probe_set.num_classes());
        let acc_over = |classes: &[usize]| {
            mean_of(classes.iter().filter_map(|&c| per_class[c]))
        };
        trace.push(TracePoint {
            epoch,
            kl,
            cka,
            acc_existing: acc_over(&existing),
            acc_absent: acc_over(&absent),
        });
        Ok(())
    })?;
    Ok((trained, trace))
}
