//! Federated orchestration: server state, client registry, per-round
//! client sampling, the four local-optimization strategies, weighted
//! aggregation, and the full round loop.
//!
//! One round: sample the active set, hand the global model to every
//! active client, run their local optimizations independently (in
//! parallel when configured), aggregate the trained models weighted by
//! shard size, apply the server update rule, evaluate.
//!
//! Determinism: client `k`'s batch order in round `t`, epoch `e` comes
//! from the stream `derive(derive(client_seed_k, t), e)`, so schedules
//! never share generator state and sequential and parallel execution
//! produce identical results.

use std::time::Instant;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::drift::{aux_labels_batch, estimate_drift_batch, lfd_targets};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_from_predictions, linear_cka, lp_from_predictions, mean_kl_from_logits, predictions,
    ClientRoundMetrics, KlDirection, RoundRecord,
};
use crate::model::{one_hot, ClassifierModel, HeadKind};
use crate::optim::SgdState;
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;

// Stream tags under the run's root seed.
const STREAM_INIT: u64 = 1;
const STREAM_SAMPLING: u64 = 2;
const STREAM_CLIENT: u64 = 3;

/// Local-optimization strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    FedAvg,
    /// Proximal term `(mu/2) |w - w_global|^2` added to the local loss.
    FedProx { mu: f64 },
    /// FedAvg clients plus server-side momentum on the aggregate delta.
    FedAvgM { server_momentum: f64 },
    /// Drift-regularized training on the normalized-margin head.
    Lfd { margin: f64, temperature: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx { .. } => "fedprox",
            Strategy::FedAvgM { .. } => "fedavgm",
            Strategy::Lfd { .. } => "lfd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::FedAvg => Ok(()),
            Strategy::FedProx { mu } => {
                if mu < 0.0 {
                    Err(Error::InvalidParameter {
                        name: "mu",
                        message: format!("must be >= 0, got {mu}"),
                    })
                } else {
                    Ok(())
                }
            }
            Strategy::FedAvgM { server_momentum } => {
                if !(0.0..1.0).contains(&server_momentum) {
                    Err(Error::InvalidParameter {
                        name: "server_momentum",
                        message: format!("must be in [0, 1), got {server_momentum}"),
                    })
                } else {
                    Ok(())
                }
            }
            Strategy::Lfd { margin, temperature } => {
                if !(0.0..=1.0).contains(&margin) {
                    return Err(Error::InvalidParameter {
                        name: "margin",
                        message: format!("must be in [0, 1], got {margin}"),
                    });
                }
                if temperature <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "temperature",
                        message: format!("must be > 0, got {temperature}"),
                    });
                }
                Ok(())
            }
        }
    }

    /// The head kind this strategy trains.
    pub fn head_kind<S: Scalar>(&self) -> HeadKind<S> {
        match *self {
            Strategy::Lfd { margin, temperature } => HeadKind::NormalizedMargin {
                margin: S::from_f64_c(margin),
                temperature: S::from_f64_c(temperature),
            },
            _ => HeadKind::Standard,
        }
    }
}

/// Local SGD hyperparameters, instantiated fresh for every local
/// optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Everything a client needs to run one local optimization.
#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One simulated client: its shard never leaves this struct.
#[derive(Debug, Clone)]
pub struct ClientState<S = f64> {
    pub id: usize,
    pub shard: Dataset<S>,
    /// The client's own most recent locally trained model; `None` until
    /// its first participation. Serves as the frozen previous-round model
    /// during drift estimation.
    pub prev_local_model: Option<ClassifierModel<S>>,
    pub rng_seed: u64,
}

/// Server-side state across rounds.
#[derive(Debug, Clone)]
pub struct ServerState<S = f64> {
    pub round: usize,
    pub global_model: ClassifierModel<S>,
    /// FedAvgM velocity, lazily initialized; mirrors the parameter count.
    momentum_buffer: Option<Vec<S>>,
    pub history: Vec<RoundRecord>,
}

impl<S: Scalar> ServerState<S> {
    pub fn new(global_model: ClassifierModel<S>) -> Self {
        ServerState {
            round: 0,
            global_model,
            momentum_buffer: None,
            history: Vec::new(),
        }
    }
}

/// Build the client registry from a dataset and a partition manifest.
/// Client `k` draws its private randomness from
/// `derive(derive(root_seed, CLIENT_STREAM), k)`.
pub fn build_clients<S: Scalar>(
    train: &Dataset<S>,
    assignments: &[Vec<usize>],
    root_seed: u64,
) -> Vec<ClientState<S>> {
    let client_stream = derive_seed(root_seed, STREAM_CLIENT);
    assignments
        .iter()
        .enumerate()
        .map(|(id, assignment)| ClientState {
            id,
            shard: train.subset(assignment),
            prev_local_model: None,
            rng_seed: derive_seed(client_stream, id as u64),
        })
        .collect()
}

/// Seed for global-model initialization under a run's root seed.
pub fn init_seed(root_seed: u64) -> u64 {
    derive_seed(root_seed, STREAM_INIT)
}

/// Seed for per-round client sampling under a run's root seed.
pub fn sampling_seed(root_seed: u64) -> u64 {
    derive_seed(root_seed, STREAM_SAMPLING)
}

/// Uniform sample without replacement of `max(1, round(fraction * k))`
/// client ids, deterministic in `(seed, round)`. Returned sorted.
pub fn sample_active_clients(
    num_clients: usize,
    fraction: f64,
    round: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "active_fraction",
            message: format!("must be in (0, 1], got {fraction}"),
        });
    }
    let count = ((fraction * num_clients as f64).round() as usize)
        .max(1)
        .min(num_clients);
    let mut rng = SplitMix64::new(derive_seed(seed, round as u64));
    let mut ids: Vec<usize> = (0..num_clients).collect();
    // Partial Fisher-Yates: the first `count` slots become the sample.
    for i in 0..count {
        let j = i + rng.next_index(num_clients - i);
        ids.swap(i, j);
    }
    ids.truncate(count);
    ids.sort_unstable();
    Ok(ids)
}

/// Weighted average of models, `p_k = sizes[k] / sum(sizes)`.
///
/// Evaluated as `m_1 + sum_k p_k (m_k - m_1)`, an algebraically identical
/// form of the weighted mean under which a single input, or identical
/// inputs, aggregate to themselves exactly.
pub fn aggregate<S: Scalar>(
    models: &[ClassifierModel<S>],
    data_sizes: &[usize],
) -> Result<ClassifierModel<S>> {
    if models.is_empty() {
        return Err(Error::Aggregation("no models to aggregate".into()));
    }
    if models.len() != data_sizes.len() {
        return Err(Error::Aggregation(format!(
            "{} models but {} data sizes",
            models.len(),
            data_sizes.len()
        )));
    }
    if data_sizes.contains(&0) {
        return Err(Error::Aggregation("zero-sized client shard".into()));
    }
    let arch = models[0].arch();
    for (k, model) in models.iter().enumerate().skip(1) {
        if model.arch() != arch {
            return Err(Error::Aggregation(format!(
                "model {k} has architecture {:?}, expected {arch:?}",
                model.arch()
            )));
        }
    }
    let total: usize = data_sizes.iter().sum();
    let mut out = models[0].clone();
    if models.len() == 1 {
        return Ok(out);
    }
    let base = models[0].params_flat();
    let mut acc = base.clone();
    for (model, &size) in models.iter().zip(data_sizes).skip(1) {
        let weight = S::from_f64_c(size as f64 / total as f64);
        for ((a, &m), &b) in acc.iter_mut().zip(&model.params_flat()).zip(&base) {
            *a += weight * (m - b);
        }
    }
    out.set_params_flat(&acc)?;
    Ok(out)
}

/// Weights used by [`aggregate`]; they sum to one over the active set.
pub fn aggregation_weights(data_sizes: &[usize]) -> Vec<f64> {
    let total: usize = data_sizes.iter().sum();
    data_sizes
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect()
}

/// Apply the strategy's server-side update with the freshly aggregated
/// model. FedAvg/FedProx/LfD replace the global model; FedAvgM applies
/// server momentum: `v <- b v + (w_t - agg); w <- w_t - v`, evaluated as
/// `w <- agg - b v_old` so `b = 0` is plain replacement, exactly.
pub fn server_update<S: Scalar>(
    state: &mut ServerState<S>,
    aggregated: ClassifierModel<S>,
    strategy: &Strategy,
) -> Result<()> {
    match *strategy {
        Strategy::FedAvgM { server_momentum } => {
            let count = state.global_model.param_count();
            if aggregated.param_count() != count {
                return Err(Error::DimMismatch {
                    context: "server_update",
                    expected: format!("{count} parameters"),
                    got: format!("{}", aggregated.param_count()),
                });
            }
            let beta = S::from_f64_c(server_momentum);
            let buffer = state
                .momentum_buffer
                .get_or_insert_with(|| vec![S::zero(); count]);
            if buffer.len() != count {
                return Err(Error::DimMismatch {
                    context: "server_update momentum buffer",
                    expected: format!("{count} parameters"),
                    got: format!("{}", buffer.len()),
                });
            }
            let old = state.global_model.params_flat();
            let agg = aggregated.params_flat();
            let mut new_params = vec![S::zero(); count];
            for i in 0..count {
                let v_old = buffer[i];
                let delta = old[i] - agg[i];
                buffer[i] = beta * v_old + delta;
                new_params[i] = agg[i] - beta * v_old;
            }
            state.global_model.set_params_flat(&new_params)?;
        }
        _ => {
            if aggregated.param_count() != state.global_model.param_count() {
                return Err(Error::DimMismatch {
                    context: "server_update",
                    expected: format!("{} parameters", state.global_model.param_count()),
                    got: format!("{}", aggregated.param_count()),
                });
            }
            state.global_model = aggregated;
        }
    }
    Ok(())
}

/// Train one client from the given global snapshot for the configured
/// number of epochs; returns the trained model. The caller stores it as
/// the client's new `prev_local_model`.
pub fn local_optimize<S: Scalar>(
    client: &ClientState<S>,
    global_model: &ClassifierModel<S>,
    cfg: &StrategyConfig,
    round: usize,
) -> Result<ClassifierModel<S>> {
    local_optimize_with_epochs(client, global_model, cfg, round, |_, _| Ok(()))
}

/// [`local_optimize`] with a per-epoch observer. The observer fires at
/// epoch 0 (the untouched global copy) and after every training epoch.
pub fn local_optimize_with_epochs<S: Scalar>(
    client: &ClientState<S>,
    global_model: &ClassifierModel<S>,
    cfg: &StrategyConfig,
    round: usize,
    mut on_epoch: impl FnMut(usize, &ClassifierModel<S>) -> Result<()>,
) -> Result<ClassifierModel<S>> {
    cfg.validate()?;
    if client.shard.is_empty() {
        return Err(Error::EmptyShard { client: client.id });
    }
    match (cfg.strategy, global_model.head()) {
        (Strategy::Lfd { .. }, HeadKind::NormalizedMargin { .. }) => {}
        (Strategy::Lfd { .. }, HeadKind::Standard) => {
            return Err(Error::InvalidParameter {
                name: "strategy",
                message: "drift regularization requires the normalized-margin head".into(),
            });
        }
        (_, HeadKind::NormalizedMargin { .. }) => {
            return Err(Error::InvalidParameter {
                name: "strategy",
                message: format!(
                    "{} trains the standard head, model has the normalized-margin head",
                    cfg.strategy.name()
                ),
            });
        }
        (_, HeadKind::Standard) => {}
    }

    let mut model = global_model.clone();
    let round_seed = derive_seed(client.rng_seed, round as u64);

    // Frozen drift-estimation models: the client's own previous local
    // model, or the received global at its first participation.
    let lfd = match cfg.strategy {
        Strategy::Lfd { temperature, .. } => {
            // Epoch tag 0 is reserved for repairs so it never collides
            // with a batch-shuffle stream.
            let mut repair_rng = SplitMix64::new(derive_seed(round_seed, 0));
            model.reinit_degenerate_head_rows(&mut repair_rng);
            let prev = client.prev_local_model.as_ref().unwrap_or(global_model);
            Some((prev, S::from_f64_c(temperature)))
        }
        _ => None,
    };
    let prox = match cfg.strategy {
        Strategy::FedProx { mu } if mu != 0.0 => {
            Some((S::from_f64_c(mu), global_model.params_flat()))
        }
        _ => None,
    };

    let opt = cfg.optimizer;
    let mut sgd = SgdState::new(
        S::from_f64_c(opt.learning_rate),
        S::from_f64_c(opt.momentum),
        S::from_f64_c(opt.weight_decay),
        model.param_count(),
    )?;

    on_epoch(0, &model)?;
    let n = client.shard.len();
    let num_classes = model.num_classes();
    for epoch in 1..=cfg.local_epochs {
        // Each epoch shuffles the identity permutation under its own
        // derived stream, so an epoch's batch order is a pure function of
        // (client seed, round, epoch).
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(derive_seed(round_seed, epoch as u64));
        rng.shuffle(&mut indices);
        for chunk in indices.chunks(cfg.batch_size) {
            let (x, labels) = client.shard.batch(chunk);
            let (cache, targets) = match lfd {
                None => {
                    let cache = model.forward_training(&x, None, false)?;
                    (cache, one_hot::<S>(&labels, num_classes)?)
                }
                Some((prev_model, temperature)) => {
                    let cos_prev = prev_model.forward_normalized(&x)?;
                    let cos_global = global_model.forward_normalized(&x)?;
                    let drift = estimate_drift_batch(&cos_prev, &cos_global, temperature)?;
                    let aux = aux_labels_batch(&drift)?;
                    let cache = model.forward_training(&x, Some(&labels), true)?;
                    (cache, lfd_targets(&labels, &aux)?)
                }
            };
            let (_, mut grads) = model.backward(&cache, &targets)?;
            if let Some((mu, ref global_flat)) = prox {
                let mut offset = 0;
                for slice in model.param_slices() {
                    for (i, &p) in slice.iter().enumerate() {
                        let g = &mut grads[offset + i];
                        *g += mu * (p - global_flat[offset + i]);
                    }
                    offset += slice.len();
                }
            }
            let mut slices = model.param_slices_mut();
            sgd.step(&mut slices, &grads)?;
        }
        on_epoch(epoch, &model)?;
    }
    Ok(model)
}

/// Per-round evaluation switches.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub kl: bool,
    pub cka: bool,
    pub lp: bool,
    pub kl_direction: KlDirection,
    /// Softmax temperature for the divergence metrics.
    pub temperature: f64,
    /// Compute CKA on penultimate features instead of logits.
    pub cka_on_features: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kl: true,
            cka: true,
            lp: true,
            kl_direction: KlDirection::LocalToGlobal,
            temperature: 1.0,
            cka_on_features: false,
        }
    }
}

/// Static configuration of a federation run.
#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub rounds: usize,
    pub active_fraction: f64,
    pub strategy: StrategyConfig,
    pub eval: EvalOptions,
    /// Root seed; sampling and client streams derive from it.
    pub seed: u64,
    /// Run active clients on the rayon pool. Results are identical either
    /// way; sequential execution exists for the schedule-independence
    /// contract and for debugging.
    pub parallel: bool,
    /// Report elapsed round time as 0.0 so emitted artifacts are
    /// byte-reproducible.
    pub deterministic_timing: bool,
}

/// A runnable federation: server, clients, and the held-out test set.
pub struct Federation<S = f64> {
    pub config: FederationConfig,
    pub server: ServerState<S>,
    pub clients: Vec<ClientState<S>>,
    pub test_set: Dataset<S>,
}

impl<S: Scalar> Federation<S> {
    pub fn new(
        config: FederationConfig,
        global_model: ClassifierModel<S>,
        clients: Vec<ClientState<S>>,
        test_set: Dataset<S>,
    ) -> Result<Self> {
        config.strategy.validate()?;
        if clients.is_empty() {
            return Err(Error::InvalidParameter {
                name: "clients",
                message: "need at least one client".into(),
            });
        }
        if test_set.is_empty() {
            return Err(Error::InvalidParameter {
                name: "test_set",
                message: "need a nonempty test set".into(),
            });
        }
        Ok(Federation {
            config,
            server: ServerState::new(global_model),
            clients,
            test_set,
        })
    }

    /// Run every round, invoking `on_round` with the round record and the
    /// updated global model as each round completes. Records also
    /// accumulate in `server.history`.
    pub fn run_with(
        &mut self,
        mut on_round: impl FnMut(&RoundRecord, &ClassifierModel<S>) -> Result<()>,
    ) -> Result<()> {
        for t in 1..=self.config.rounds {
            let record = self.run_round(t)?;
            on_round(&record, &self.server.global_model)?;
            self.server.history.push(record);
            self.server.round = t;
        }
        Ok(())
    }

    /// Run every round and return the accumulated history.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        self.run_with(|_, _| Ok(()))?;
        Ok(self.server.history.clone())
    }

    fn run_round(&mut self, round: usize) -> Result<RoundRecord> {
        let start = Instant::now();
        let sampling = sampling_seed(self.config.seed);
        let active =
            sample_active_clients(self.clients.len(), self.config.active_fraction, round, sampling)?;
        let snapshot = self.server.global_model.clone();
        let strategy_cfg = &self.config.strategy;

        let optimize = |&id: &usize| -> Result<Option<(usize, ClassifierModel<S>)>> {
            match local_optimize(&self.clients[id], &snapshot, strategy_cfg, round) {
                Ok(model) => Ok(Some((id, model))),
                Err(Error::EmptyShard { .. }) => Ok(None),
                Err(err) => Err(err.in_round(round, id)),
            }
        };
        let results: Vec<Option<(usize, ClassifierModel<S>)>> = if self.config.parallel {
            active
                .par_iter()
                .map(optimize)
                .collect::<Result<Vec<_>>>()?
        } else {
            active.iter().map(optimize).collect::<Result<Vec<_>>>()?
        };
        let trained: Vec<(usize, ClassifierModel<S>)> = results.into_iter().flatten().collect();
        if trained.is_empty() {
            return Err(Error::Aggregation(format!(
                "round {round}: no active client produced a model"
            )));
        }

        let models: Vec<ClassifierModel<S>> = trained.iter().map(|(_, m)| m.clone()).collect();
        let sizes: Vec<usize> = trained
            .iter()
            .map(|(id, _)| self.clients[*id].shard.len())
            .collect();
        let aggregated = aggregate(&models, &sizes)?;
        server_update(&mut self.server, aggregated, &strategy_cfg.strategy)?;

        let record = self.evaluate_round(round, &snapshot, &trained, start)?;
        for (id, model) in trained {
            self.clients[id].prev_local_model = Some(model);
        }
        Ok(record)
    }

    fn evaluate_round(
        &self,
        round: usize,
        distributed_global: &ClassifierModel<S>,
        trained: &[(usize, ClassifierModel<S>)],
        start: Instant,
    ) -> Result<RoundRecord> {
        let eval = self.config.eval;
        let temp = S::from_f64_c(eval.temperature);
        let test = &self.test_set;
        let num_classes = test.num_classes();

        let global_test_accuracy = {
            let logits = self.server.global_model.inference_logits(test.features())?;
            accuracy_from_predictions(&predictions(&logits), test.labels())
        };

        let snapshot_logits = distributed_global.inference_logits(test.features())?;
        let snapshot_preds = predictions(&snapshot_logits);

        let mut per_client = std::collections::BTreeMap::new();
        for (id, model) in trained {
            let local_logits = model.inference_logits(test.features())?;
            let local_preds = predictions(&local_logits);
            let local_accuracy = accuracy_from_predictions(&local_preds, test.labels());

            let mean_kl_to_global = if eval.kl {
                Some(match eval.kl_direction {
                    KlDirection::LocalToGlobal => {
                        mean_kl_from_logits(&local_logits, &snapshot_logits, temp)?
                    }
                    KlDirection::GlobalToLocal => {
                        mean_kl_from_logits(&snapshot_logits, &local_logits, temp)?
                    }
                })
            } else {
                None
            };
            let cka_logits = if eval.cka {
                if eval.cka_on_features {
                    let local_features = model.forward_features(test.features())?;
                    let snapshot_features =
                        distributed_global.forward_features(test.features())?;
                    Some(linear_cka(&local_features, &snapshot_features)?)
                } else {
                    Some(linear_cka(&local_logits, &snapshot_logits)?)
                }
            } else {
                None
            };

            let (lp_existing, lp_absent, lp_excluded) = if eval.lp {
                let existing = self.clients[*id].shard.classes_present();
                let absent: Vec<usize> = (0..num_classes)
                    .filter(|c| !existing.contains(c))
                    .collect();
                let lp_of = |subset: &[usize]| -> Result<Option<crate::metrics::LpScore>> {
                    if subset.is_empty() {
                        return Ok(None);
                    }
                    match lp_from_predictions(
                        &local_preds,
                        &snapshot_preds,
                        test.labels(),
                        num_classes,
                        subset,
                    ) {
                        Ok(score) => Ok(Some(score)),
                        // Undefined LP (every class excluded) is reported
                        // as missing rather than failing the round.
                        Err(Error::Metric(_)) => Ok(None),
                        Err(err) => Err(err),
                    }
                };
                let existing_score = lp_of(&existing)?;
                let absent_score = lp_of(&absent)?;
                let excluded = existing_score.map_or(0, |s| s.excluded)
                    + absent_score.map_or(0, |s| s.excluded);
                (
                    existing_score.map(|s| s.value),
                    absent_score.map(|s| s.value),
                    excluded,
                )
            } else {
                (None, None, 0)
            };

            per_client.insert(
                *id,
                ClientRoundMetrics {
                    local_accuracy,
                    mean_kl_to_global,
                    cka_logits,
                    lp_existing,
                    lp_absent,
                    lp_excluded,
                },
            );
        }

        let elapsed_seconds = if self.config.deterministic_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        };
        Ok(RoundRecord {
            round,
            global_test_accuracy,
            per_client,
            elapsed_seconds,
        })
    }
}
