//! The classifier family: an MLP feature stack with either a standard
//! affine head or a normalized-margin (cosine) head, plus analytic
//! gradients for both.
//!
//! The cosine head normalizes features and classifier weight rows so
//! logits are plain cosines; during training a margin is subtracted from
//! the ground-truth class before the temperature scaling. Inference never
//! applies the margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax_rows, Activation, DenseLayer};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Norm floor below which normalization is refused (features) or a weight
/// row is considered degenerate and eligible for re-initialization.
pub const NORM_EPSILON: f64 = 1e-12;

/// Classifier head flavor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadKind<S = f64> {
    /// Affine logits `W u + b`.
    Standard,
    /// Cosine logits with train-time margin `m` and temperature `tau`.
    NormalizedMargin { margin: S, temperature: S },
}

impl<S: Scalar> HeadKind<S> {
    fn validate(&self) -> Result<()> {
        if let HeadKind::NormalizedMargin { margin, temperature } = *self {
            if margin < S::zero() || margin > S::one() {
                return Err(Error::InvalidParameter {
                    name: "margin",
                    message: format!("must be in [0, 1], got {margin}"),
                });
            }
            if temperature <= S::zero() {
                return Err(Error::InvalidParameter {
                    name: "temperature",
                    message: format!("must be > 0, got {temperature}"),
                });
            }
        }
        Ok(())
    }
}

/// Architecture descriptor: enough to rebuild the layer shapes.
///
/// The family is ReLU hidden layers followed by a linear projection of
/// the same width as the last entry in `hidden_layers`; the projection
/// output is the feature vector the head consumes. A linear projection
/// keeps feature vectors away from the all-zero point that ReLU stacks
/// can hit, which the cosine head must refuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
}

/// Feedforward classifier with interchangeable head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<S = f64> {
    feature_layers: Vec<(DenseLayer<S>, Activation)>,
    head_layer: DenseLayer<S>,
    head: HeadKind<S>,
}

/// Forward intermediates required by [`ClassifierModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S = f64> {
    /// `layer_io[0]` is the input batch; `layer_io[i]` the post-activation
    /// output of feature layer `i-1`. The last entry is the feature batch.
    layer_io: Vec<Matrix<S>>,
    head: HeadCache<S>,
}

#[derive(Debug, Clone)]
enum HeadCache<S> {
    Standard {
        logits: Matrix<S>,
    },
    Normalized {
        u_hat: Matrix<S>,
        w_hat: Matrix<S>,
        cos: Matrix<S>,
        u_norm: Vec<S>,
        w_norm: Vec<S>,
        logits: Matrix<S>,
    },
}

impl<S: Scalar> ForwardCache<S> {
    /// Logits the loss is taken over (margin and temperature already
    /// applied for the cosine head).
    pub fn logits(&self) -> &Matrix<S> {
        match &self.head {
            HeadCache::Standard { logits } => logits,
            HeadCache::Normalized { logits, .. } => logits,
        }
    }

    pub fn features(&self) -> &Matrix<S> {
        self.layer_io.last().expect("cache holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.layer_io[0].rows()
    }
}

impl<S: Scalar> ClassifierModel<S> {
    /// Seeded He-style initialization of the whole family.
    pub fn init(arch: &ModelArch, head: HeadKind<S>, rng: &mut SplitMix64) -> Result<Self> {
        head.validate()?;
        if arch.input_dim == 0 || arch.num_classes < 2 {
            return Err(Error::InvalidParameter {
                name: "arch",
                message: format!(
                    "need input_dim > 0 and num_classes >= 2, got {arch:?}"
                ),
            });
        }
        let mut feature_layers = Vec::with_capacity(arch.hidden_layers.len());
        let mut in_dim = arch.input_dim;
        for (i, &h) in arch.hidden_layers.iter().enumerate() {
            if h == 0 {
                return Err(Error::InvalidParameter {
                    name: "arch.hidden_layers",
                    message: "hidden layer width must be > 0".into(),
                });
            }
            let activation = if i + 1 == arch.hidden_layers.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            feature_layers.push((DenseLayer::he_init(in_dim, h, rng), activation));
            in_dim = h;
        }
        let head_layer = DenseLayer::he_init(in_dim, arch.num_classes, rng);
        Ok(ClassifierModel {
            feature_layers,
            head_layer,
            head,
        })
    }

    /// Assemble from explicit parts, checking shape consistency.
    pub fn from_parts(
        feature_layers: Vec<(DenseLayer<S>, Activation)>,
        head_layer: DenseLayer<S>,
        head: HeadKind<S>,
    ) -> Result<Self> {
        head.validate()?;
        let mut dim = feature_layers
            .first()
            .map(|(l, _)| l.in_dim())
            .unwrap_or_else(|| head_layer.in_dim());
        for (i, (layer, _)) in feature_layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::DimMismatch {
                    context: "ClassifierModel::from_parts",
                    expected: format!("feature layer {i} in-dim {dim}"),
                    got: format!("{}", layer.in_dim()),
                });
            }
            dim = layer.out_dim();
        }
        if head_layer.in_dim() != dim {
            return Err(Error::DimMismatch {
                context: "ClassifierModel::from_parts",
                expected: format!("head in-dim {dim}"),
                got: format!("{}", head_layer.in_dim()),
            });
        }
        Ok(ClassifierModel {
            feature_layers,
            head_layer,
            head,
        })
    }

    pub fn head(&self) -> HeadKind<S> {
        self.head
    }

    pub fn feature_layers(&self) -> &[(DenseLayer<S>, Activation)] {
        &self.feature_layers
    }

    pub fn head_layer(&self) -> &DenseLayer<S> {
        &self.head_layer
    }

    pub fn num_classes(&self) -> usize {
        self.head_layer.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_layers
            .first()
            .map(|(l, _)| l.in_dim())
            .unwrap_or_else(|| self.head_layer.in_dim())
    }

    pub fn arch(&self) -> ModelArch {
        ModelArch {
            input_dim: self.input_dim(),
            hidden_layers: self.feature_layers.iter().map(|(l, _)| l.out_dim()).collect(),
            num_classes: self.num_classes(),
        }
    }

    // -- parameter plumbing ------------------------------------------------

    /// Canonical flat order: each feature layer's weights (row-major) then
    /// bias, in depth order, then the head weights and head bias. Every
    /// flat gradient, velocity buffer, and aggregation walk uses this
    /// order.
    pub fn param_slices(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(2 * self.feature_layers.len() + 2);
        for (layer, _) in &self.feature_layers {
            out.push(layer.weights.as_slice());
            out.push(layer.bias.as_slice());
        }
        out.push(self.head_layer.weights.as_slice());
        out.push(self.head_layer.bias.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::with_capacity(2 * self.feature_layers.len() + 2);
        for (layer, _) in &mut self.feature_layers {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.head_layer.weights.as_mut_slice());
        out.push(self.head_layer.bias.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimMismatch {
                context: "set_params_flat",
                expected: format!("{} parameters", self.param_count()),
                got: format!("{}", flat.len()),
            });
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    // -- forward passes ----------------------------------------------------

    /// Penultimate representation: the feature stack applied to `x`.
    /// A zero-depth stack returns `x` unchanged.
    pub fn forward_features(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        Ok(self.forward_features_cached(x)?.pop().expect("non-empty"))
    }

    fn forward_features_cached(&self, x: &Matrix<S>) -> Result<Vec<Matrix<S>>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                context: "forward_features",
                expected: format!("input cols {}", self.input_dim()),
                got: format!("{}x{}", x.rows(), x.cols()),
            });
        }
        let mut io = Vec::with_capacity(self.feature_layers.len() + 1);
        io.push(x.clone());
        for (layer, act) in &self.feature_layers {
            let pre = layer.forward(io.last().expect("non-empty"))?;
            io.push(pre.map(|v| act.apply(v)));
        }
        Ok(io)
    }

    /// Cosine logits `cos(theta)[b][i] = (W_i / |W_i|) . (u_b / |u_b|)`,
    /// each in `[-1, 1]`. Requires the normalized-margin head.
    pub fn forward_normalized(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        self.require_normalized()?;
        let u = self.forward_features(x)?;
        Ok(self.cosines(&u)?.cos)
    }

    /// Logits for the training loss of the normalized-margin head.
    ///
    /// With `training = true` the ground-truth logit becomes
    /// `(cos - margin) / tau`; other classes are `cos / tau`. With
    /// `training = false` no margin is applied and `labels` is ignored.
    pub fn forward_margin(
        &self,
        x: &Matrix<S>,
        labels: Option<&[usize]>,
        training: bool,
    ) -> Result<Matrix<S>> {
        self.require_normalized()?;
        let (margin, temperature) = match self.head {
            HeadKind::NormalizedMargin { margin, temperature } => (margin, temperature),
            HeadKind::Standard => unreachable!("checked above"),
        };
        let cos = self.forward_normalized(x)?;
        scale_with_margin(&cos, margin, temperature, labels, training)
    }

    /// Logits used for evaluation: affine logits for the standard head,
    /// temperature-scaled margin-free cosines for the normalized head.
    pub fn inference_logits(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        match self.head {
            HeadKind::Standard => {
                let u = self.forward_features(x)?;
                self.head_layer.forward(&u)
            }
            HeadKind::NormalizedMargin { .. } => self.forward_margin(x, None, false),
        }
    }

    /// Full forward pass retaining everything `backward` needs.
    ///
    /// For the normalized head, `labels` must be given when `training`;
    /// the standard head ignores both flags.
    pub fn forward_training(
        &self,
        x: &Matrix<S>,
        labels: Option<&[usize]>,
        training: bool,
    ) -> Result<ForwardCache<S>> {
        let layer_io = self.forward_features_cached(x)?;
        let u = layer_io.last().expect("non-empty");
        let head = match self.head {
            HeadKind::Standard => HeadCache::Standard {
                logits: self.head_layer.forward(u)?,
            },
            HeadKind::NormalizedMargin { margin, temperature } => {
                let parts = self.cosines(u)?;
                let logits =
                    scale_with_margin(&parts.cos, margin, temperature, labels, training)?;
                HeadCache::Normalized {
                    u_hat: parts.u_hat,
                    w_hat: parts.w_hat,
                    cos: parts.cos,
                    u_norm: parts.u_norm,
                    w_norm: parts.w_norm,
                    logits,
                }
            }
        };
        Ok(ForwardCache { layer_io, head })
    }

    fn require_normalized(&self) -> Result<()> {
        match self.head {
            HeadKind::NormalizedMargin { .. } => Ok(()),
            HeadKind::Standard => Err(Error::InvalidParameter {
                name: "head",
                message: "operation requires the normalized-margin head".into(),
            }),
        }
    }

    fn cosines(&self, u: &Matrix<S>) -> Result<CosineParts<S>> {
        if u.cols() != self.head_layer.in_dim() {
            return Err(Error::DimMismatch {
                context: "normalized head",
                expected: format!("feature dim {}", self.head_layer.in_dim()),
                got: format!("{}x{}", u.rows(), u.cols()),
            });
        }
        let eps = S::from_f64_c(NORM_EPSILON);
        let mut u_hat = u.clone();
        let mut u_norm = Vec::with_capacity(u.rows());
        for r in 0..u.rows() {
            let row = u_hat.row_mut(r);
            let norm = row
                .iter()
                .fold(S::zero(), |acc, &v| v.mul_add(v, acc))
                .sqrt();
            if norm < eps {
                return Err(Error::DegenerateFeature {
                    row: r,
                    eps: NORM_EPSILON,
                });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
            u_norm.push(norm);
        }
        let w = &self.head_layer.weights;
        let mut w_hat = w.clone();
        let mut w_norm = Vec::with_capacity(w.rows());
        for r in 0..w.rows() {
            let row = w_hat.row_mut(r);
            let norm = row
                .iter()
                .fold(S::zero(), |acc, &v| v.mul_add(v, acc))
                .sqrt();
            if norm < eps {
                return Err(Error::Validation(format!(
                    "classifier weight row {r} has norm below {NORM_EPSILON:e}; \
                     re-initialize it before using the cosine head"
                )));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
            w_norm.push(norm);
        }
        let one = S::one();
        let cos = u_hat.matmul_nt(&w_hat)?.map(|c| c.min(one).max(-one));
        Ok(CosineParts {
            u_hat,
            w_hat,
            cos,
            u_norm,
            w_norm,
        })
    }

    /// Re-initialize head weight rows whose norm fell below the guard.
    /// Returns how many rows were redrawn.
    pub fn reinit_degenerate_head_rows(&mut self, rng: &mut SplitMix64) -> usize {
        let eps = S::from_f64_c(NORM_EPSILON);
        let in_dim = self.head_layer.in_dim();
        let limit = (6.0 / in_dim as f64).sqrt();
        let mut redrawn = 0;
        for r in 0..self.head_layer.out_dim() {
            let row = self.head_layer.weights.row_mut(r);
            let norm = row
                .iter()
                .fold(S::zero(), |acc, &v| v.mul_add(v, acc))
                .sqrt();
            if norm < eps {
                for v in row.iter_mut() {
                    *v = S::from_f64_c(rng.next_range(-limit, limit));
                }
                redrawn += 1;
            }
        }
        redrawn
    }

    // -- backward ----------------------------------------------------------

    /// Mean cross-entropy of the cached logits against per-example target
    /// weight rows, and its gradient w.r.t. every parameter in canonical
    /// flat order. Targets need not sum to one per row.
    pub fn backward(&self, cache: &ForwardCache<S>, targets: &Matrix<S>) -> Result<(S, Vec<S>)> {
        let logits = cache.logits();
        let batch = logits.rows();
        let classes = logits.cols();
        if targets.rows() != batch || targets.cols() != classes {
            return Err(Error::CacheMismatch(format!(
                "cached logits are {batch}x{classes}, targets are {}x{}",
                targets.rows(),
                targets.cols()
            )));
        }
        if cache.layer_io.len() != self.feature_layers.len() + 1
            || cache.features().cols() != self.head_layer.in_dim()
        {
            return Err(Error::CacheMismatch(
                "cache was built by a model with a different architecture".into(),
            ));
        }
        if targets.as_slice().iter().any(|&t| t < S::zero()) {
            return Err(Error::Validation(
                "target weights must be non-negative".into(),
            ));
        }

        let probs = softmax_rows(logits, S::one())?;
        let mut loss = S::zero();
        for (p_row, t_row) in probs.iter_rows().zip(targets.iter_rows()) {
            loss += cross_entropy(p_row, t_row)?;
        }
        let batch_s = S::from_f64_c(batch as f64);
        loss /= batch_s;

        // dL/dlogit[b][i] = (sum_j t[b][j] * p[b][i] - t[b][i]) / batch
        let mut dz = Matrix::zeros(batch, classes);
        for b in 0..batch {
            let t_row = targets.row(b);
            let p_row = probs.row(b);
            let t_sum: S = t_row.iter().copied().sum();
            let out = dz.row_mut(b);
            for i in 0..classes {
                out[i] = (t_sum * p_row[i] - t_row[i]) / batch_s;
            }
        }

        let head_grads = self.head_backward(cache, &dz)?;
        let mut d_features = head_grads.d_features;

        // Feature stack, deepest first.
        let mut layer_grads: Vec<(Matrix<S>, Vec<S>)> =
            Vec::with_capacity(self.feature_layers.len());
        for (idx, (layer, act)) in self.feature_layers.iter().enumerate().rev() {
            let input = &cache.layer_io[idx];
            let output = &cache.layer_io[idx + 1];
            let mut d_pre = d_features;
            for r in 0..d_pre.rows() {
                let row = d_pre.row_mut(r);
                let out_row = output.row(r);
                for (g, &y) in row.iter_mut().zip(out_row) {
                    *g *= act.grad_from_output(y);
                }
            }
            let d_weights = d_pre.matmul_tn(input)?;
            let d_bias = column_sums(&d_pre);
            d_features = d_pre.matmul_nn(&layer.weights)?;
            layer_grads.push((d_weights, d_bias));
        }
        layer_grads.reverse();

        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in &layer_grads {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(head_grads.d_weights.as_slice());
        flat.extend_from_slice(&head_grads.d_bias);
        debug_assert_eq!(flat.len(), self.param_count());
        Ok((loss, flat))
    }

    /// Gradient w.r.t. features plus the head's own (weights, bias) grads.
    fn head_backward(&self, cache: &ForwardCache<S>, dz: &Matrix<S>) -> Result<HeadGrads<S>> {
        match (&cache.head, self.head) {
            (HeadCache::Standard { .. }, HeadKind::Standard) => {
                let u = cache.features();
                let d_weights = dz.matmul_tn(u)?;
                let d_bias = column_sums(dz);
                let d_u = dz.matmul_nn(&self.head_layer.weights)?;
                Ok(HeadGrads {
                    d_features: d_u,
                    d_weights,
                    d_bias,
                })
            }
            (
                HeadCache::Normalized {
                    u_hat,
                    w_hat,
                    cos,
                    u_norm,
                    w_norm,
                    ..
                },
                HeadKind::NormalizedMargin { temperature, .. },
            ) => {
                // Chain rule through z = (cos - margin 1_y)/tau and the two
                // normalizations; the margin shift is constant in the
                // parameters.
                let g = dz.map(|v| v / temperature);
                let batch = g.rows();
                let classes = g.cols();

                // d cos[b][i] / d u_b = (w_hat_i - cos[b][i] u_hat_b) / |u_b|
                let mut d_u = g.matmul_nn(w_hat)?;
                for (b, &norm) in u_norm.iter().enumerate().take(batch) {
                    let mut s_b = S::zero();
                    let g_row = g.row(b);
                    let c_row = cos.row(b);
                    for i in 0..classes {
                        s_b = g_row[i].mul_add(c_row[i], s_b);
                    }
                    let u_hat_row = u_hat.row(b);
                    for (value, &u_hat_j) in d_u.row_mut(b).iter_mut().zip(u_hat_row) {
                        *value = (*value - s_b * u_hat_j) / norm;
                    }
                }

                // d cos[b][i] / d W_i = (u_hat_b - cos[b][i] w_hat_i) / |W_i|
                let mut d_weights = g.matmul_tn(u_hat)?;
                for (i, &norm) in w_norm.iter().enumerate().take(classes) {
                    let mut q_i = S::zero();
                    for b in 0..batch {
                        q_i = g.get(b, i).mul_add(cos.get(b, i), q_i);
                    }
                    let w_hat_row = w_hat.row(i);
                    for (value, &w_hat_j) in d_weights.row_mut(i).iter_mut().zip(w_hat_row) {
                        *value = (*value - q_i * w_hat_j) / norm;
                    }
                }

                let d_bias = vec![S::zero(); classes];
                Ok(HeadGrads {
                    d_features: d_u,
                    d_weights,
                    d_bias,
                })
            }
            _ => Err(Error::CacheMismatch(
                "cache head kind does not match the model head".into(),
            )),
        }
    }
}

struct HeadGrads<S> {
    d_features: Matrix<S>,
    d_weights: Matrix<S>,
    d_bias: Vec<S>,
}

struct CosineParts<S> {
    u_hat: Matrix<S>,
    w_hat: Matrix<S>,
    cos: Matrix<S>,
    u_norm: Vec<S>,
    w_norm: Vec<S>,
}

fn scale_with_margin<S: Scalar>(
    cos: &Matrix<S>,
    margin: S,
    temperature: S,
    labels: Option<&[usize]>,
    training: bool,
) -> Result<Matrix<S>> {
    let mut logits = cos.map(|c| c / temperature);
    if training {
        let labels = labels.ok_or_else(|| Error::InvalidParameter {
            name: "labels",
            message: "training-mode margin forward requires labels".into(),
        })?;
        if labels.len() != cos.rows() {
            return Err(Error::DimMismatch {
                context: "forward_margin",
                expected: format!("{} labels", cos.rows()),
                got: format!("{}", labels.len()),
            });
        }
        for (b, &y) in labels.iter().enumerate() {
            if y >= cos.cols() {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: cos.cols(),
                });
            }
            logits.set(b, y, (cos.get(b, y) - margin) / temperature);
        }
    }
    Ok(logits)
}

fn column_sums<S: Scalar>(m: &Matrix<S>) -> Vec<S> {
    let mut out = vec![S::zero(); m.cols()];
    for row in m.iter_rows() {
        for (acc, &v) in out.iter_mut().zip(row) {
            *acc += v;
        }
    }
    out
}

/// One-hot target rows for a label vector.
pub fn one_hot<S: Scalar>(labels: &[usize], num_classes: usize) -> Result<Matrix<S>> {
    let mut out = Matrix::zeros(labels.len(), num_classes);
    for (b, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        out.set(b, y, S::one());
    }
    Ok(out)
}
