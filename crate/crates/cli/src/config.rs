//! Run configuration: JSON schema, defaults, validation, and loading.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall
//! back to a default. Validation reports every offending key by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedsim_core::federation::{EvalOptions, OptimizerConfig, Strategy, StrategyConfig};
use fedsim_core::metrics::KlDirection;
use fedsim_core::rng::derive_seed;

use crate::CliError;

// Stream tags under the run seed for inputs without an explicit seed.
const STREAM_DATA: u64 = 11;
const STREAM_PARTITION: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub strategy: StrategySpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub save_round_checkpoints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        /// Explicit generator seed; derived from the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        /// Expected class count; checked against the loaded data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    32
}
fn default_train_per_class() -> usize {
    500
}
fn default_test_per_class() -> usize {
    100
}
fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Explicit partition seed; derived from the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_num_clients() -> usize {
    10
}
fn default_beta() -> f64 {
    0.5
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            num_clients: default_num_clients(),
            beta: default_beta(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
#[derive(Default)]
pub enum StrategySpec {
    #[serde(rename = "fedavg")]
    #[default]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx { mu: f64 },
    #[serde(rename = "fedavgm")]
    FedAvgM { server_momentum: f64 },
    #[serde(rename = "lfd")]
    Lfd {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

fn default_margin() -> f64 {
    0.15
}
fn default_temperature() -> f64 {
    0.1
}


impl StrategySpec {
    pub fn to_strategy(&self) -> Strategy {
        match *self {
            StrategySpec::FedAvg => Strategy::FedAvg,
            StrategySpec::FedProx { mu } => Strategy::FedProx { mu },
            StrategySpec::FedAvgM { server_momentum } => Strategy::FedAvgM { server_momentum },
            StrategySpec::Lfd { margin, temperature } => Strategy::Lfd { margin, temperature },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_active_fraction")]
    pub active_fraction: f64,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_rounds() -> usize {
    30
}
fn default_active_fraction() -> f64 {
    1.0
}
fn default_local_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    128
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            rounds: default_rounds(),
            active_fraction: default_active_fraction(),
            local_epochs: default_local_epochs(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: Vec<usize>,
}

fn default_hidden_layers() -> Vec<usize> {
    vec![64, 32]
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_layers: default_hidden_layers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_learning_rate() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-5
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_true")]
    pub kl: bool,
    #[serde(default = "default_true")]
    pub cka: bool,
    #[serde(default = "default_true")]
    pub lp: bool,
    #[serde(default = "default_kl_direction")]
    pub kl_direction: KlDirectionSpec,
    #[serde(default = "default_eval_temperature")]
    pub temperature: f64,
    /// Compute CKA on penultimate features instead of logits.
    #[serde(default)]
    pub cka_on_features: bool,
    /// Client whose local optimization the `trace` command follows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_client: Option<usize>,
    /// Start the trace from this checkpoint instead of training inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_checkpoint: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}
fn default_eval_temperature() -> f64 {
    1.0
}
fn default_kl_direction() -> KlDirectionSpec {
    KlDirectionSpec::LocalToGlobal
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            kl: true,
            cka: true,
            lp: true,
            kl_direction: default_kl_direction(),
            temperature: default_eval_temperature(),
            cka_on_features: false,
            probe_client: None,
            trace_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirectionSpec {
    LocalToGlobal,
    GlobalToLocal,
}

impl From<KlDirectionSpec> for KlDirection {
    fn from(spec: KlDirectionSpec) -> Self {
        match spec {
            KlDirectionSpec::LocalToGlobal => KlDirection::LocalToGlobal,
            KlDirectionSpec::GlobalToLocal => KlDirection::GlobalToLocal,
        }
    }
}

impl RunConfig {
    /// Parse a config file. A run manifest (`{"build": ..., "config": ...}`)
    /// is accepted transparently, so a finished run replays from its own
    /// manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let config_value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        let config: RunConfig = serde_json::from_value(config_value)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Apply command-line overrides; re-validates nothing the overrides
    /// cannot break.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        deterministic: bool,
        out: Option<PathBuf>,
    ) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if deterministic {
            self.deterministic = true;
        }
        if let Some(out) = out {
            self.output_dir = Some(out);
        }
        self
    }

    /// Check every field range; the error lists each offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
                ..
            } => {
                if *classes < 2 {
                    problems.push("dataset.classes: need >= 2".to_string());
                }
                if *dim < 2 {
                    problems.push("dataset.dim: need >= 2".to_string());
                }
                if *train_per_class < 1 {
                    problems.push("dataset.train_per_class: need >= 1".to_string());
                }
                if *test_per_class < 1 {
                    problems.push("dataset.test_per_class: need >= 1".to_string());
                }
                if *spread < 0.0 {
                    problems.push("dataset.spread: must be >= 0".to_string());
                }
            }
            DatasetSpec::Csv { .. } | DatasetSpec::Idx { .. } => {}
        }
        if self.partition.num_clients < 1 {
            problems.push("partition.num_clients: need >= 1".to_string());
        }
        if self.partition.beta <= 0.0 || self.partition.beta.is_nan() {
            problems.push("partition.beta: must be > 0".to_string());
        }
        match self.strategy {
            StrategySpec::FedProx { mu } if mu < 0.0 => {
                problems.push("strategy.mu: must be >= 0".to_string());
            }
            StrategySpec::FedAvgM { server_momentum }
                if !(0.0..1.0).contains(&server_momentum) =>
            {
                problems.push("strategy.server_momentum: must be in [0, 1)".to_string());
            }
            StrategySpec::Lfd { margin, temperature } => {
                if !(0.0..=1.0).contains(&margin) {
                    problems.push("strategy.margin: must be in [0, 1]".to_string());
                }
                if temperature <= 0.0 {
                    problems.push("strategy.temperature: must be > 0".to_string());
                }
            }
            _ => {}
        }
        if !(self.schedule.active_fraction > 0.0 && self.schedule.active_fraction <= 1.0) {
            problems.push("schedule.active_fraction: must be in (0, 1]".to_string());
        }
        if self.schedule.batch_size == 0 {
            problems.push("schedule.batch_size: need >= 1".to_string());
        }
        if self.model.hidden_layers.contains(&0) {
            problems.push("model.hidden_layers: widths must be > 0".to_string());
        }
        if self.optimizer.learning_rate <= 0.0 || self.optimizer.learning_rate.is_nan() {
            problems.push("optimizer.learning_rate: must be > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            problems.push("optimizer.momentum: must be in [0, 1)".to_string());
        }
        if self.optimizer.weight_decay < 0.0 {
            problems.push("optimizer.weight_decay: must be >= 0".to_string());
        }
        if self.eval.temperature <= 0.0 || self.eval.temperature.is_nan() {
            problems.push("eval.temperature: must be > 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(problems.join("; ")))
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        match &self.dataset {
            DatasetSpec::Synthetic { seed: Some(s), .. } => *s,
            _ => derive_seed(self.seed, STREAM_DATA),
        }
    }

    pub fn partition_seed(&self) -> u64 {
        self.partition
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, STREAM_PARTITION))
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy.to_strategy(),
            local_epochs: self.schedule.local_epochs,
            batch_size: self.schedule.batch_size,
            optimizer: OptimizerConfig {
                learning_rate: self.optimizer.learning_rate,
                momentum: self.optimizer.momentum,
                weight_decay: self.optimizer.weight_decay,
            },
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            kl: self.eval.kl,
            cka: self.eval.cka,
            lp: self.eval.lp,
            kl_direction: self.eval.kl_direction.into(),
            temperature: self.eval.temperature,
            cka_on_features: self.eval.cka_on_features,
        }
    }

    /// Comparison identity: the run-defining fields with every seed and
    /// strategy choice stripped. Two runs compare only when these match.
    pub fn comparison_key(&self) -> serde_json::Value {
        let mut dataset = serde_json::to_value(&self.dataset).expect("serializable");
        if let Some(obj) = dataset
            .as_object_mut()
            .and_then(|o| o.values_mut().next())
            .and_then(|v| v.as_object_mut())
        {
            obj.remove("seed");
        }
        serde_json::json!({
            "dataset": dataset,
            "partition": {
                "num_clients": self.partition.num_clients,
                "beta": self.partition.beta,
            },
            "schedule": serde_json::to_value(&self.schedule).expect("serializable"),
            "model": serde_json::to_value(&self.model).expect("serializable"),
            "optimizer": serde_json::to_value(&self.optimizer).expect("serializable"),
        })
    }
}
