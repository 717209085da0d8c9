//! The four subcommands and the pipeline plumbing they share.

mod compare;
mod partition;
mod trace;
mod train;

pub use compare::cmd_compare;
pub use partition::cmd_partition;
pub use trace::cmd_trace;
pub use train::cmd_train;

use std::path::PathBuf;

use fedsim_core::data::{self, Dataset, SyntheticSpec};
use fedsim_core::federation::{
    build_clients, init_seed, ClientState, Federation, FederationConfig,
};
use fedsim_core::model::{ClassifierModel, ModelArch};
use fedsim_core::partition::{dirichlet_partition, PartitionManifest};
use fedsim_core::rng::SplitMix64;

use crate::config::{DatasetSpec, RunConfig};
use crate::CliError;

/// Version of the `metrics.csv` column layout.
pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str =
    "round,strategy,global_acc,mean_client_kl,mean_cka,lp_existing,lp_absent,seconds";

pub(crate) fn require_output_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.output_dir.clone().ok_or_else(|| {
        CliError::config("output_dir: required (set it in the config or pass --out)")
    })
}

/// Load or generate the train/test pair named by the config.
pub fn load_data(config: &RunConfig) -> Result<(Dataset<f64>, Dataset<f64>), CliError> {
    match &config.dataset {
        DatasetSpec::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            ..
        } => {
            let spec = SyntheticSpec {
                classes: *classes,
                dim: *dim,
                per_class: *train_per_class,
                spread: *spread,
                seed: config.dataset_seed(),
            };
            Ok(spec.generate_split(*test_per_class)?)
        }
        DatasetSpec::Csv {
            train_path,
            test_path,
            num_classes,
        } => {
            let train: Dataset<f64> = data::load_csv(train_path)?;
            let test: Dataset<f64> = data::load_csv(test_path)?;
            if let Some(expected) = num_classes {
                for (name, ds) in [("train", &train), ("test", &test)] {
                    if ds.num_classes() > *expected {
                        return Err(CliError::config(format!(
                            "dataset.num_classes: declared {expected}, {name} data holds a label \
                             >= {expected}"
                        )));
                    }
                }
            }
            Ok((train, test))
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train: Dataset<f64> = data::load_idx(train_images, train_labels)?;
            let test: Dataset<f64> = data::load_idx(test_images, test_labels)?;
            Ok((train, test))
        }
    }
}

pub fn build_partition(
    config: &RunConfig,
    train: &Dataset<f64>,
) -> Result<PartitionManifest, CliError> {
    Ok(dirichlet_partition(
        train.labels(),
        config.partition.num_clients,
        config.partition.beta,
        config.partition_seed(),
    )?)
}

/// Assemble the full federation for a resolved config.
pub fn build_federation(
    config: &RunConfig,
    train: &Dataset<f64>,
    test: Dataset<f64>,
    manifest: &PartitionManifest,
) -> Result<Federation<f64>, CliError> {
    let clients: Vec<ClientState<f64>> = build_clients(train, &manifest.assignments, config.seed);
    let arch = ModelArch {
        input_dim: train.dim(),
        hidden_layers: config.model.hidden_layers.clone(),
        num_classes: train.num_classes(),
    };
    let strategy_cfg = config.strategy_config();
    let mut rng = SplitMix64::new(init_seed(config.seed));
    let global = ClassifierModel::init(&arch, strategy_cfg.strategy.head_kind(), &mut rng)?;
    let fed_config = FederationConfig {
        rounds: config.schedule.rounds,
        active_fraction: config.schedule.active_fraction,
        strategy: strategy_cfg,
        eval: config.eval_options(),
        seed: config.seed,
        parallel: true,
        deterministic_timing: config.deterministic,
    };
    Ok(Federation::new(fed_config, global, clients, test)?)
}

pub(crate) fn fmt_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "nan".to_string(),
    }
}

/// The run manifest wraps the resolved config with build identifiers.
pub(crate) fn run_manifest_json(config: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "build": {
            "package": "fedsim-cli",
            "package_version": env!("CARGO_PKG_VERSION"),
            "metrics_schema_version": METRICS_SCHEMA_VERSION,
        },
        "config": config,
    })
}
