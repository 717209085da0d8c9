use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

/// A completed run as read back from its directory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub strategy: String,
    pub seed: u64,
    pub final_accuracy: f64,
    pub config: RunConfig,
}

/// Aggregated statistics per strategy.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StrategySummary {
    pub runs: usize,
    pub mean_final_accuracy: f64,
    /// Sample standard deviation; absent for a single run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_final_accuracy: Option<f64>,
    pub final_accuracies: Vec<f64>,
}

/// Summarize completed run directories: mean and standard deviation of
/// final-round accuracy per strategy. Refuses runs whose dataset or
/// partition setup differ. Returns the rendered table; the JSON summary
/// is written to `out/compare.json` when `out` is given.
pub fn cmd_compare(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<String, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::config("compare: need at least one run directory"));
    }
    let summaries: Vec<RunSummary> = run_dirs
        .iter()
        .map(|dir| read_run_dir(dir))
        .collect::<Result<_, _>>()?;

    let key = summaries[0].config.comparison_key();
    for summary in &summaries[1..] {
        if summary.config.comparison_key() != key {
            return Err(CliError::config(format!(
                "compare: {} and {} describe different experiments \
                 (dataset/partition/schedule mismatch)",
                summaries[0].dir.display(),
                summary.dir.display()
            )));
        }
    }

    let mut by_strategy: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for summary in &summaries {
        by_strategy
            .entry(summary.strategy.clone())
            .or_default()
            .push(summary);
    }

    let mut stats: BTreeMap<String, StrategySummary> = BTreeMap::new();
    let mut table = String::new();
    let _ = writeln!(table, "strategy  runs  final_acc_mean  final_acc_std  seeds");
    for (strategy, runs) in &by_strategy {
        let finals: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
        let n = finals.len();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let var = finals.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
            var.sqrt()
        });
        let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        let _ = writeln!(
            table,
            "{strategy:<9} {n:<5} {mean:<15.4} {:<14} {seeds:?}",
            std.map_or_else(|| "-".to_string(), |s| format!("{s:.4}")),
        );
        stats.insert(
            strategy.clone(),
            StrategySummary {
                runs: n,
                mean_final_accuracy: mean,
                std_final_accuracy: std,
                final_accuracies: finals,
            },
        );
    }

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("compare.json"),
            serde_json::to_string_pretty(&stats)? + "\n",
        )?;
    }
    Ok(table)
}

/// Read `run-manifest.json` and the last `metrics.csv` row of a run dir.
pub fn read_run_dir(dir: &Path) -> Result<RunSummary, CliError> {
    let config = RunConfig::load(dir.join("run-manifest.json"))?;
    let metrics_path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| CliError::config(format!("{}: {e}", metrics_path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != super::METRICS_HEADER {
        return Err(CliError::config(format!(
            "{}: unexpected metrics schema `{header}`",
            metrics_path.display()
        )));
    }
    let last = lines.rfind(|l| !l.is_empty())
        .ok_or_else(|| {
            CliError::config(format!("{}: no completed rounds", metrics_path.display()))
        })?;
    let fields: Vec<&str> = last.split(',').collect();
    if fields.len() != 8 {
        return Err(CliError::config(format!(
            "{}: malformed row `{last}`",
            metrics_path.display()
        )));
    }
    let strategy = fields[1].to_string();
    let final_accuracy: f64 = fields[2].parse().map_err(|_| {
        CliError::config(format!(
            "{}: global_acc `{}` is not a number",
            metrics_path.display(),
            fields[2]
        ))
    })?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        strategy,
        seed: config.seed,
        final_accuracy,
        config,
    })
}
