//! Dirichlet non-IID partitioning of example indices across clients.
//!
//! For each class `i` a proportion vector `p_i. ~ Dir_K(beta)` is drawn
//! and that class's shuffled indices are split among the `K` clients by
//! largest-remainder rounding, so the counts cover the class exactly.
//! Smaller `beta` concentrates classes on fewer clients.
//!
//! The whole procedure is replayable: attempt `a` uses the stream
//! `SplitMix64(derive_seed(seed, a))`; classes are visited in ascending
//! order and, per class, the index shuffle is drawn before the Dirichlet
//! proportions. If any client ends up empty the attempt is discarded and
//! the partition is resampled, up to [`MAX_PARTITION_ATTEMPTS`] tries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const MAX_PARTITION_ATTEMPTS: usize = 100;

/// The realized allocation of example indices to clients.
///
/// Serialized form is exactly `{beta, seed, num_clients, assignments}`;
/// the sampled per-class proportions are an in-memory extra and are not
/// part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub beta: f64,
    pub seed: u64,
    pub num_clients: usize,
    /// Per-client sorted example indices; a disjoint cover of `0..n`.
    pub assignments: Vec<Vec<usize>>,
    /// Sampled Dirichlet proportions, `proportions[class][client]`.
    /// Empty after deserialization.
    #[serde(skip)]
    pub proportions: Vec<Vec<f64>>,
}

impl PartitionManifest {
    /// Total number of assigned examples.
    pub fn total_examples(&self) -> usize {
        self.assignments.iter().map(|a| a.len()).sum()
    }

    /// Check the disjoint-cover invariant against a dataset of `n` rows.
    pub fn validate_cover(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (client, assignment) in self.assignments.iter().enumerate() {
            for &idx in assignment {
                if idx >= n {
                    return Err(Error::Validation(format!(
                        "client {client} holds index {idx}, dataset has {n} rows"
                    )));
                }
                if seen[idx] {
                    return Err(Error::Validation(format!(
                        "index {idx} assigned to more than one client"
                    )));
                }
                seen[idx] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Validation(format!(
                "index {missing} not assigned to any client"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: PartitionManifest = serde_json::from_str(&text)?;
        if manifest.assignments.len() != manifest.num_clients {
            return Err(Error::Validation(format!(
                "manifest declares {} clients but holds {} assignment lists",
                manifest.num_clients,
                manifest.assignments.len()
            )));
        }
        Ok(manifest)
    }
}

/// Split real-valued proportions of `total` items into integer counts by
/// largest remainder; ties go to the lower index.
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let ideals: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = ideals.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideals[a] - ideals[a].floor();
        let fb = ideals[b] - ideals[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

/// Partition `labels` into `num_clients` shards, Dirichlet-skewed by class.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<PartitionManifest> {
    if num_clients < 1 {
        return Err(Error::InvalidParameter {
            name: "num_clients",
            message: "need at least one client".into(),
        });
    }
    if beta <= 0.0 || beta.is_nan() {
        return Err(Error::InvalidParameter {
            name: "beta",
            message: format!("must be > 0, got {beta}"),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter {
            name: "labels",
            message: "cannot partition an empty dataset".into(),
        });
    }

    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (idx, &y) in labels.iter().enumerate() {
        by_class[y].push(idx);
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = SplitMix64::new(derive_seed(seed, attempt as u64));
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        let mut proportions: Vec<Vec<f64>> = Vec::with_capacity(num_classes);

        for class_indices in &by_class {
            let mut shuffled = class_indices.clone();
            rng.shuffle(&mut shuffled);
            let props = rng.next_dirichlet(beta, num_clients);
            let counts = largest_remainder_counts(&props, shuffled.len());
            let mut offset = 0;
            for (client, &count) in counts.iter().enumerate() {
                assignments[client].extend_from_slice(&shuffled[offset..offset + count]);
                offset += count;
            }
            proportions.push(props);
        }

        if assignments.iter().all(|a| !a.is_empty()) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(PartitionManifest {
                beta,
                seed,
                num_clients,
                assignments,
                proportions,
            });
        }
    }
    Err(Error::PartitionRetriesExhausted {
        attempts: MAX_PARTITION_ATTEMPTS,
    })
}

/// Mean over clients of the largest class share in each client's shard;
/// 1.0 means every client sees a single class, `1/num_classes` is perfect
/// balance. A convenient skew statistic for summaries and tests.
pub fn mean_max_class_share(manifest: &PartitionManifest, labels: &[usize]) -> f64 {
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut total = 0.0;
    for assignment in &manifest.assignments {
        let mut hist = vec![0usize; num_classes];
        for &idx in assignment {
            hist[labels[idx]] += 1;
        }
        let max = hist.iter().max().copied().unwrap_or(0);
        total += max as f64 / assignment.len() as f64;
    }
    total / manifest.assignments.len() as f64
}
