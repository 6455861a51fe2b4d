//! Invariants that hold for every input, checked with proptest.

use crl_core::data::{self, generate, split, Fractions, GenerativeSpec, SplitTag};
use crl_core::losses::{bce_with_logits, similarity_loss, uniformity_loss, LatentBatch, Pairing};
use crl_core::metrics::{
    auroc, load_embeddings, mcc_strong, mcc_weak, save_embeddings, separation_delta, separation_from_projections,
    Embeddings,
};
use crl_core::model::{init, load_checkpoint, save_checkpoint, Architecture};
use crl_core::numerics::{Matrix, Rng, Stream};
use crl_core::sampler::{draw_grouped_batch, draw_iteration, partition_groups, GroupDraw, SamplerConfig};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn matrix_from(seed: u64, r: usize, c: usize) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn both_classes(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

fn small_spec(groups: usize) -> GenerativeSpec {
    GenerativeSpec {
        groups,
        group_style_means: (0..groups).map(|k| vec![k as f64; 2]).collect(),
        group_style_scales: vec![vec![1.0; 2]; groups],
        ..GenerativeSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_is_invariant_to_monotone_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        labels in prop::collection::vec(0u8..2, 60),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(both_classes(labels));
        let a = auroc(&scores, labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert!((auroc(&mapped, labels).unwrap() - a).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auroc_flips_with_the_labels(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        labels in prop::collection::vec(0u8..2, 60),
    ) {
        let labels = &labels[..scores.len()];
        prop_assume!(both_classes(labels));
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let sum = auroc(&scores, labels).unwrap() + auroc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strong_mcc_ignores_column_permutation_and_sign(seed in 0u64..10_000, n in 2usize..5) {
        let a = matrix_from(seed, 40, n);
        let b = matrix_from(seed + 1, 40, n);
        let mut rng = Rng::new(seed + 2);
        let perm = rng.permutation(n);
        let mut shuffled = Matrix::zeros(40, n);
        for i in 0..40 {
            for (j, &pj) in perm.iter().enumerate() {
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                shuffled[(i, j)] = sign * b[(i, pj)];
            }
        }
        let m1 = mcc_strong(&a, &b).unwrap();
        let m2 = mcc_strong(&a, &shuffled).unwrap();
        prop_assert!((m1 - m2).abs() < 1e-12);
        prop_assert!((mcc_strong(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m1));
    }

    #[test]
    fn weak_mcc_is_one_under_invertible_affine_maps(seed in 0u64..10_000, n in 1usize..5) {
        let b = matrix_from(seed, 80, n);
        let mut m = matrix_from(seed + 1, n, n);
        for i in 0..n {
            m[(i, i)] += 3.0;
        }
        let mut a = b.matmul(&m).unwrap();
        for i in 0..80 {
            for j in 0..n {
                a[(i, j)] += j as f64 - 1.5;
            }
        }
        prop_assert!((mcc_weak(&a, &b).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn weak_mcc_dominates_strong_mcc(seed in 0u64..10_000, na in 1usize..6, nb in 1usize..6, noise in 0.0f64..3.0) {
        let a = matrix_from(seed, 50, na);
        let b = a
            .matmul(&matrix_from(seed + 1, na, nb))
            .unwrap()
            .add(&matrix_from(seed + 2, 50, nb).scale(noise))
            .unwrap();
        prop_assert!(mcc_weak(&a, &b).unwrap() >= mcc_strong(&a, &b).unwrap() - 1e-9);
    }

    #[test]
    fn delta_lies_in_unit_interval(p in prop::collection::vec(-10.0f64..10.0, 2..80), labels in prop::collection::vec(0u8..2, 80)) {
        let labels = &labels[..p.len()];
        prop_assume!(both_classes(labels));
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi - lo > 1e-9);
        let d = separation_from_projections(&p, labels).unwrap().delta;
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn delta_is_invariant_to_global_affine_maps(seed in 0u64..10_000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let z = matrix_from(seed, 60, 3);
        let labels: Vec<u8> = (0..60).map(|i| u8::from(z[(i, 0)] + 0.3 * z[(i, 1)] > 0.0)).collect();
        prop_assume!(both_classes(&labels));
        let plain = separation_delta(&z, &labels).unwrap().delta;
        let moved = separation_delta(&z.map(|v| scale * v + shift), &labels).unwrap().delta;
        prop_assert!((plain - moved).abs() < 1e-9);
    }

    #[test]
    fn loss_terms_have_expected_signs(seed in 0u64..10_000, rows in 2usize..16, t in 0.1f64..4.0) {
        let z = matrix_from(seed, rows, 4);
        let groups: Vec<usize> = (0..rows).map(|i| i % 2).collect();
        let labels: Vec<u8> = (0..rows).map(|i| ((i / 2) % 2) as u8).collect();
        let batch = LatentBatch::new(z, groups, labels.clone()).unwrap();
        let pairs: Vec<(usize, usize)> = (1..rows).map(|i| (i, i - 1)).collect();
        prop_assert!(similarity_loss(&batch, &Pairing::chain(pairs)).unwrap() >= 0.0);
        prop_assert!(similarity_loss(&batch, &Pairing::AllPairs).unwrap() >= 0.0);
        // The kernel mean over distinct rows is at most one.
        prop_assert!(uniformity_loss(&batch, t).unwrap() <= 1e-12);
        let logits: Vec<f64> = batch.z.col(0);
        prop_assert!(bce_with_logits(&labels, &logits).unwrap() > 0.0);
    }

    #[test]
    fn uniformity_is_zero_for_a_collapsed_batch(rows in 2usize..12, v in -2.0f64..2.0, t in 0.1f64..4.0) {
        let batch = LatentBatch::new(Matrix::filled(rows, 3, v), vec![0; rows], vec![0; rows]).unwrap();
        prop_assert!(uniformity_loss(&batch, t).unwrap().abs() < 1e-12);
        prop_assert!(similarity_loss(&batch, &Pairing::chain(vec![(1, 0)])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn embeddings_round_trip(seed in 0u64..10_000, rows in 1usize..20, n in 1usize..6) {
        let z = matrix_from(seed, rows, n).map(|v| v * 1e3f64.powf(v.signum()));
        let e = Embeddings {
            z,
            labels: (0..rows).map(|i| (i % 2) as u8).collect(),
            groups: (0..rows).map(|i| i % 3).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        save_embeddings(&e, &path).unwrap();
        prop_assert_eq!(load_embeddings(&path).unwrap(), e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_csv_round_trips(seed in 0u64..1000, n in 40usize..120) {
        let ds = generate(&small_spec(2), n, &mut Rng::stream(seed, Stream::Data)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data::save(&ds, &path).unwrap();
        prop_assert_eq!(data::load(&path).unwrap(), ds);
    }

    #[test]
    fn checkpoint_round_trips(seed in 0u64..1000, width in 2usize..10, latent in 2usize..6) {
        let arch = Architecture(vec![3, width, latent]);
        let model = init(&arch, &mut Rng::stream(seed, Stream::Init)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, seed, 3, dir.path(), "ck").unwrap();
        let (back, manifest) = load_checkpoint(dir.path(), "ck").unwrap();
        prop_assert_eq!(manifest.epoch, 3);
        prop_assert_eq!(manifest.run_seed, seed);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn split_partitions_every_cell(seed in 0u64..1000, n in 60usize..300, groups in 1usize..4) {
        let ds = generate(&small_spec(groups), n, &mut Rng::stream(seed, Stream::Data)).unwrap();
        let s = split(&ds, Fractions::default(), &mut Rng::stream(seed, Stream::Split)).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), ds.len());
        prop_assert_eq!(s.train.split_tag(), SplitTag::Train);
        let key = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let all: BTreeSet<_> = ds.samples().iter().map(|s| key(&s.x)).collect();
        let mut seen = BTreeSet::new();
        for part in [&s.train, &s.val, &s.test] {
            for sample in part.samples() {
                prop_assert!(seen.insert(key(&sample.x)));
            }
            let cells = partition_groups(part);
            prop_assert!(cells.empty_cells().is_empty());
        }
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn iterations_share_a_class_and_chain_across_groups(
        seed in 0u64..1000,
        p in 2usize..7,
        groups in 2usize..4,
        distinct in any::<bool>(),
    ) {
        let ds = generate(&small_spec(groups), 200, &mut Rng::stream(seed, Stream::Data)).unwrap();
        let cells = partition_groups(&ds);
        let cfg = SamplerConfig {
            samples_per_iteration: p,
            group_draw: if distinct { GroupDraw::Distinct } else { GroupDraw::WithReplacement },
            ..SamplerConfig::default()
        };
        let mut rng = Rng::stream(seed, Stream::Sampling);
        for _ in 0..10 {
            let it = draw_iteration(&cfg, &cells, &mut rng).unwrap();
            prop_assert_eq!(it.samples.len(), p);
            for &(row, g) in &it.samples {
                prop_assert_eq!(ds.samples()[row].y, it.y);
                prop_assert_eq!(ds.samples()[row].group, g);
            }
            prop_assert!(it.reference_order.iter().all(|&r| r < p));
            for (a, b) in it.pairs().skip(1) {
                prop_assert_eq!(b, a - 1);
                if distinct {
                    prop_assert_ne!(it.samples[a].1, it.samples[b].1);
                }
            }
        }
        let batch = draw_grouped_batch(&cfg, &cells, 32, &mut rng).unwrap();
        prop_assert!(batch.rows.len() >= 32);
        prop_assert_eq!(batch.rows.len() % p, 0);
        if let Pairing::Chain { pairs, rounds } = &batch.pairing {
            prop_assert_eq!(*rounds, batch.iterations.len());
            for &(a, b) in pairs {
                prop_assert_eq!(batch.labels[a], batch.labels[b]);
            }
        } else {
            prop_assert!(false, "grouped batch must carry chain pairs");
        }
    }
}
