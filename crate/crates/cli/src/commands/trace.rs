use std::io::Write as _;
use std::path::PathBuf;

use fedsim_core::checkpoint::load_checkpoint;
use fedsim_core::federation::Strategy;
use fedsim_core::metrics::trace_local_optimization;
use fedsim_core::model::HeadKind;

use crate::config::RunConfig;
use crate::CliError;

use super::{build_federation, build_partition, fmt_metric, load_data, require_output_dir};

/// Trace one client's local optimization against a frozen global model
/// and write `trace.csv` with one row per epoch (including epoch 0).
///
/// The global model comes from `eval.trace_checkpoint` when set;
/// otherwise the configured federation is trained inline first and the
/// client keeps the state it reached in that run.
pub fn cmd_trace(config: &RunConfig) -> Result<PathBuf, CliError> {
    let out = require_output_dir(config)?;
    let probe = config.eval.probe_client.ok_or_else(|| {
        CliError::config("eval.probe_client: required for the trace command")
    })?;
    if probe >= config.partition.num_clients {
        return Err(CliError::config(format!(
            "eval.probe_client: client {probe} does not exist ({} clients)",
            config.partition.num_clients
        )));
    }
    std::fs::create_dir_all(&out)?;

    let (train, test) = load_data(config)?;
    let manifest = build_partition(config, &train)?;
    let mut federation = build_federation(config, &train, test, &manifest)?;
    let strategy_cfg = config.strategy_config();

    let (global, trace_round) = match &config.eval.trace_checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let head_matches = matches!(
                (strategy_cfg.strategy, model.head()),
                (Strategy::Lfd { .. }, HeadKind::NormalizedMargin { .. })
            ) || matches!(
                (strategy_cfg.strategy, model.head()),
                (
                    Strategy::FedAvg | Strategy::FedProx { .. } | Strategy::FedAvgM { .. },
                    HeadKind::Standard
                )
            );
            if !head_matches {
                return Err(CliError::config(format!(
                    "eval.trace_checkpoint: head kind does not match strategy `{}`",
                    strategy_cfg.strategy.name()
                )));
            }
            (model, 1)
        }
        None => {
            federation.run()?;
            (
                federation.server.global_model.clone(),
                federation.config.rounds + 1,
            )
        }
    };

    let client = federation.clients[probe].clone();
    let (_, trace) =
        trace_local_optimization(&client, &global, &strategy_cfg, trace_round, &federation.test_set)?;

    let path = out.join("trace.csv");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(file, "epoch,kl,cka,acc_existing,acc_absent")?;
    for point in &trace {
        writeln!(
            file,
            "{},{:.6},{:.6},{},{}",
            point.epoch,
            point.kl,
            point.cka,
            fmt_metric(point.acc_existing),
            fmt_metric(point.acc_absent),
        )?;
    }
    file.flush()?;
    Ok(out)
}
