use std::io::Write as _;
use std::path::PathBuf;

use fedsim_core::checkpoint::save_checkpoint;
use fedsim_core::metrics::RoundRecord;

use crate::config::RunConfig;
use crate::CliError;

use super::{
    build_federation, build_partition, fmt_metric, load_data, require_output_dir,
    run_manifest_json, METRICS_HEADER,
};

/// Run a full federation and persist the run directory:
/// `run-manifest.json`, `partition.json`, streamed `metrics.csv`,
/// `checkpoint_final.json`, and optional per-round checkpoints.
/// A mid-run failure leaves the rows written so far plus `error.json`.
pub fn cmd_train(config: &RunConfig) -> Result<PathBuf, CliError> {
    let out = require_output_dir(config)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("run-manifest.json"),
        serde_json::to_string_pretty(&run_manifest_json(config))? + "\n",
    )?;

    match run_to_completion(config, &out) {
        Ok(()) => Ok(out),
        Err(err) => {
            let record = serde_json::json!({ "error": err.to_string() });
            let _ = std::fs::write(
                out.join("error.json"),
                serde_json::to_string_pretty(&record).unwrap_or_default() + "\n",
            );
            Err(err)
        }
    }
}

fn run_to_completion(config: &RunConfig, out: &std::path::Path) -> Result<(), CliError> {
    let (train, test) = load_data(config)?;
    let manifest = build_partition(config, &train)?;
    manifest.save(out.join("partition.json"))?;
    let mut federation = build_federation(config, &train, test, &manifest)?;

    let strategy_name = config.strategy.to_strategy().name();
    let metrics_path = out.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;

    let save_rounds = config.save_round_checkpoints;
    federation.run_with(|record, global| {
        writeln!(metrics, "{}", metrics_row(record, strategy_name))
            .map_err(fedsim_core::Error::from)?;
        metrics.flush().map_err(fedsim_core::Error::from)?;
        if save_rounds {
            save_checkpoint(global, out.join(format!("checkpoint_round_{:04}.json", record.round)))?;
        }
        Ok(())
    })?;
    save_checkpoint(&federation.server.global_model, out.join("checkpoint_final.json"))?;
    Ok(())
}

pub(crate) fn metrics_row(record: &RoundRecord, strategy: &str) -> String {
    format!(
        "{},{},{:.6},{},{},{},{},{:.6}",
        record.round,
        strategy,
        record.global_test_accuracy,
        fmt_metric(record.mean_client_kl()),
        fmt_metric(record.mean_client_cka()),
        fmt_metric(record.mean_lp_existing()),
        fmt_metric(record.mean_lp_absent()),
        record.elapsed_seconds,
    )
}
