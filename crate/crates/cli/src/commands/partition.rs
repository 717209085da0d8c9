use std::fmt::Write as _;
use std::path::PathBuf;

use fedsim_core::partition::{mean_max_class_share, PartitionManifest};

use crate::config::RunConfig;
use crate::CliError;

use super::{build_partition, load_data, require_output_dir};

/// Write `partition.json` and a per-client class-histogram summary.
/// Returns the output directory.
pub fn cmd_partition(config: &RunConfig) -> Result<PathBuf, CliError> {
    let out = require_output_dir(config)?;
    std::fs::create_dir_all(&out)?;
    let (train, _) = load_data(config)?;
    let manifest = build_partition(config, &train)?;
    manifest.save(out.join("partition.json"))?;

    let summary = partition_summary(&manifest, train.labels());
    std::fs::write(out.join("partition_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(out)
}

/// Human-readable table: one row per client with its class histogram.
pub fn partition_summary(manifest: &PartitionManifest, labels: &[usize]) -> String {
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "partition: beta={} seed={} clients={}",
        manifest.beta, manifest.seed, manifest.num_clients
    );
    let _ = writeln!(out, "client  examples  max_share  class_counts");
    for (client, assignment) in manifest.assignments.iter().enumerate() {
        let mut hist = vec![0usize; num_classes];
        for &idx in assignment {
            hist[labels[idx]] += 1;
        }
        let max_share = hist.iter().max().copied().unwrap_or(0) as f64 / assignment.len() as f64;
        let _ = writeln!(
            out,
            "{client:<7} {:<9} {max_share:<10.3} {hist:?}",
            assignment.len()
        );
    }
    let _ = writeln!(
        out,
        "mean max-class share: {:.4}",
        mean_max_class_share(manifest, labels)
    );
    out
}
