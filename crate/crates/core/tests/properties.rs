//! Property tests over the library's contract-level invariants: facts
//! that hold for all inputs, not just the worked examples.

use proptest::prelude::*;

use fedsim_core::data::{save_csv, Dataset, SyntheticSpec};
use fedsim_core::drift::{drift_to_aux_label, estimate_drift};
use fedsim_core::nn::{cross_entropy, softmax};
use fedsim_core::partition::dirichlet_partition;
use fedsim_core::tensor::Matrix;

fn logits_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_normalizes_and_is_shift_invariant(
        logits in (2usize..8).prop_flat_map(logits_vec),
        shift in -50.0..50.0f64,
        // Scaled logit gaps beyond ~36 nats saturate f64 (the largest
        // probability rounds to exactly 1.0); the strict-interior
        // invariant is asserted in the representable regime.
        temp in 0.35..3.0f64,
    ) {
        let p = softmax(&logits, temp).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));

        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let q = softmax(&shifted, temp).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative_for_weight_targets(
        logits in (2usize..8).prop_flat_map(logits_vec),
        weights in prop::collection::vec(0.0..2.0f64, 2..8),
    ) {
        let n = logits.len().min(weights.len());
        let probs = softmax(&logits[..n], 1.0).unwrap();
        let loss = cross_entropy(&probs, &weights[..n]).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss.is_finite());
    }

    #[test]
    fn aux_label_is_the_normalized_probability_ratio(
        prev in (2usize..8).prop_flat_map(logits_vec),
        shift in prop::collection::vec(-3.0..3.0f64, 2..8),
        temp in 0.3..2.0f64,
    ) {
        let n = prev.len().min(shift.len());
        let global: Vec<f64> = prev[..n].iter().zip(&shift).map(|(a, s)| a + s).collect();
        let drift = estimate_drift(&prev[..n], &global, temp).unwrap();
        let aux = drift_to_aux_label(&drift).unwrap();

        let p = softmax(&prev[..n], temp).unwrap();
        let g = softmax(&global, temp).unwrap();
        let ratios: Vec<f64> = (0..n).map(|i| g[i] / p[i]).collect();
        let total: f64 = ratios.iter().sum();
        for i in 0..n {
            prop_assert!((aux[i] - ratios[i] / total).abs() < 1e-10);
        }
    }

    #[test]
    fn partition_is_always_a_disjoint_cover(
        classes in 2usize..6,
        per_class in 5usize..40,
        clients in 1usize..6,
        beta in 0.05..10.0f64,
        seed in 0u64..1_000,
    ) {
        let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
        let manifest = dirichlet_partition(&labels, clients, beta, seed).unwrap();
        manifest.validate_cover(labels.len()).unwrap();
        prop_assert!(manifest.assignments.iter().all(|a| !a.is_empty()));
        prop_assert_eq!(manifest.total_examples(), labels.len());
    }

    #[test]
    fn csv_round_trip_preserves_the_dataset(
        rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 1..20),
        num_classes in 2usize..5,
        label_seed in 0u64..1_000,
    ) {
        let n = rows.len();
        let labels: Vec<usize> = (0..n).map(|i| ((i as u64 + label_seed) % num_classes as u64) as usize).collect();
        let features = Matrix::from_rows(rows).unwrap();
        let dataset = Dataset::new(features, labels, num_classes).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.csv");
        save_csv(&dataset, &path).unwrap();
        let reloaded: Dataset<f64> = fedsim_core::data::load_csv(&path).unwrap();
        prop_assert_eq!(reloaded.features(), dataset.features());
        prop_assert_eq!(reloaded.labels(), dataset.labels());
    }

    #[test]
    fn synthetic_generation_is_deterministic(
        seed in 0u64..500,
        spread in 0.0..2.0f64,
    ) {
        let spec = SyntheticSpec { classes: 3, dim: 4, per_class: 6, spread, seed };
        let a: Dataset<f64> = spec.generate().unwrap();
        let b: Dataset<f64> = spec.generate().unwrap();
        prop_assert_eq!(a, b);
    }
}
