//! Randomised invariants across modules.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use supgcl::downstream::{
    c_index, cox_npll, jaccard_index, kfold, macro_f1, stratified_kfold, subset_accuracy, undersample_binary,
};
use supgcl::estimate::{bootstrap_structure, hill_climb, is_acyclic, BsplineBasis, EstimateConfig, ExpressionMatrix};
use supgcl::grn::{AugmentationOp, GeneVocabulary, Grn};
use supgcl::loss::{aug_distributions, aug_loss, values, LossConfig};
use supgcl::oracle;
use supgcl::synth::{generate_truth, SynthSpec};
use supgcl::verify::{knockdown_holds, random_embeddings, random_grn, random_labels, random_survival, to_mats};

fn expression(seed: u64, genes: usize, samples: usize) -> ExpressionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = vec![0.0; genes * samples];
    for s in 0..samples {
        for g in 0..genes {
            let parent = if g > 0 { 0.7 * values[(g - 1) * samples + s] } else { 0.0 };
            values[g * samples + s] = parent + normal.sample(&mut rng);
        }
    }
    ExpressionMatrix::new(
        Arc::new(GeneVocabulary::numbered(genes)),
        (0..samples).map(|s| format!("s{s}")).collect(),
        values,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knockdown_is_idempotent_and_only_shrinks_support(seed in any::<u64>(), n in 1usize..15, density in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grn(&mut rng, n, density);
        let a = rng.random_range(0..n);
        let k = g.apply_knockdown(AugmentationOp::new(a)).unwrap();
        prop_assert!(knockdown_holds(&g, a, &k));
        prop_assert_eq!(&k.apply_knockdown(AugmentationOp::new(a)).unwrap(), &k);
        for (x, y) in g.node_features().iter().zip(k.node_features()) {
            prop_assert!(*x != 0.0 || *y == 0.0);
        }
        for (x, y) in g.edge_features().iter().zip(k.edge_features()) {
            prop_assert!(*x != 0.0 || *y == 0.0);
        }
    }

    #[test]
    fn graphs_with_self_loops_or_bad_indices_are_rejected(n in 1usize..8, s in 0usize..10) {
        let vocab = Arc::new(GeneVocabulary::numbered(n));
        let nf = vec![0.0; n];
        prop_assert!(Grn::new(vocab.clone(), vec![(s % n, s % n)], nf.clone(), vec![1.0]).is_err());
        prop_assert!(Grn::new(vocab.clone(), vec![(0, n + s)], nf.clone(), vec![1.0]).is_err());
        prop_assert!(Grn::new(vocab, vec![], vec![f64::NAN; n], vec![]).is_err());
    }

    #[test]
    fn aug_rows_are_distributions_and_losses_nonnegative(seed in any::<u64>(), k in 1usize..5, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = random_embeddings(&mut rng, k, n, 3);
        let z = random_embeddings(&mut rng, k, n, 3);
        // tau_aug >= 0.5 keeps every probability clear of 0 and 1 in floating point
        let cfg = LossConfig::new(rng.random_range(0.1..2.0), rng.random_range(0.5..5.0));
        let d = aug_distributions(&y, &z, &cfg).unwrap();
        for m in [&d.p, &d.q] {
            for row in m.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || k == 1));
            }
        }
        prop_assert!(aug_loss(&d).unwrap() >= -1e-12);
        let (total, node, aug) = values::supgcl_exact(&y, &z, &cfg).unwrap();
        prop_assert!(node >= 0.0 && aug >= -1e-12);
        prop_assert!((total - node - aug).abs() < 1e-12);
        let brute = oracle::joint_kl(&to_mats(&y), &to_mats(&z), cfg.tau_node, cfg.tau_aug);
        prop_assert!((total - brute).abs() < 1e-9);
    }

    #[test]
    fn scaling_embeddings_keeps_node_loss_but_moves_p(seed in any::<u64>(), c in 1.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = random_embeddings(&mut rng, 3, 4, 3);
        let z = random_embeddings(&mut rng, 3, 4, 3);
        let scale = |e: &[supgcl::encoder::EmbeddingMatrix]| -> Vec<supgcl::encoder::EmbeddingMatrix> {
            e.iter().map(|m| {
                let mut m = m.clone();
                m.values.data_mut().iter_mut().for_each(|v| *v *= c);
                m
            }).collect()
        };
        let (ys, zs) = (scale(&y), scale(&z));
        let before = values::node_loss(&z[0], &z[1], 0.5).unwrap();
        let after = values::node_loss(&zs[0], &zs[1], 0.5).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
        let cfg = LossConfig::new(0.5, 1.0);
        let p0 = aug_distributions(&y, &z, &cfg).unwrap().p;
        let p1 = aug_distributions(&ys, &zs, &cfg).unwrap().p;
        let moved = p0.data().iter().zip(p1.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(moved > 1e-9);
    }

    #[test]
    fn folds_partition_the_items(n in 2usize..80, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn stratified_folds_partition_and_spread(flags in proptest::collection::vec(any::<bool>(), 10..60), seed in any::<u64>()) {
        let k = 3;
        let folds = stratified_kfold(&flags, k, seed).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..flags.len()).collect::<Vec<_>>());
        let pos = flags.iter().filter(|&&f| f).count();
        for f in &folds {
            let p = f.iter().filter(|&&i| flags[i]).count();
            prop_assert!(p + 1 >= pos / k && p <= pos / k + 1);
        }
    }

    #[test]
    fn undersampling_keeps_positives_and_caps_negatives(flags in proptest::collection::vec(any::<bool>(), 10..80), seed in any::<u64>()) {
        let pos = flags.iter().filter(|&&f| f).count();
        let neg = flags.len() - pos;
        prop_assume!(pos >= 5 && neg >= 5);
        let split = undersample_binary(&flags, seed).unwrap();
        let mut used: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        let total = used.len();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), total);
        let kept_pos = used.iter().filter(|&&i| flags[i]).count();
        prop_assert_eq!(kept_pos, pos);
        prop_assert_eq!(total - kept_pos, pos.min(neg));
        prop_assert_eq!(split.test.len(), (total as f64 * 0.2).round() as usize);
    }

    #[test]
    fn metrics_match_oracles_and_lie_in_unit_interval(seed in any::<u64>(), n in 1usize..60, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_labels(&mut rng, n, k);
        let pred = random_labels(&mut rng, n, k);
        let s = subset_accuracy(&pred, &truth).unwrap();
        let f = macro_f1(&pred, &truth).unwrap();
        let j = jaccard_index(&pred, &truth).unwrap();
        prop_assert_eq!(s, oracle::subset_accuracy(&pred, &truth));
        prop_assert_eq!(f, oracle::macro_f1(&pred, &truth));
        prop_assert_eq!(j, oracle::jaccard_index(&pred, &truth));
        for v in [s, f, j] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(subset_accuracy(&truth, &truth).unwrap(), 1.0);
    }

    #[test]
    fn survival_scores_match_oracles(seed in any::<u64>(), n in 2usize..80, c in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (risks, records) = random_survival(&mut rng, n);
        if let Some(want) = oracle::c_index(&risks, &records) {
            prop_assert_eq!(c_index(&risks, &records).unwrap(), want);
        }
        if records.iter().any(|r| r.event) {
            let base = cox_npll(&risks, &records).unwrap();
            prop_assert!((base - oracle::cox_npll(&risks, &records)).abs() < 1e-9 * base.abs().max(1.0));
            let shifted: Vec<f64> = risks.iter().map(|r| r + c).collect();
            prop_assert!((cox_npll(&shifted, &records).unwrap() - base).abs() < 1e-9);
            prop_assert!(base >= 0.0);
        }
    }

    #[test]
    fn bspline_partition_of_unity(seed in any::<u64>(), m in 4usize..14, degree in 1usize..4) {
        prop_assume!(m > degree);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-5.0..5.0)).collect();
        let basis = BsplineBasis::quantile(&xs, m, degree).unwrap();
        prop_assert_eq!(basis.len(), m);
        let (lo, hi) = basis.domain();
        for _ in 0..50 {
            let b = basis.evaluate(rng.random_range(lo..hi));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(b.iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn synthetic_truth_is_acyclic(seed in any::<u64>(), n in 2usize..40, density in 0.01f64..0.9) {
        let t = generate_truth(&SynthSpec { n_genes: n, density, n_knockdown_genes: 1, seed, ..SynthSpec::default() }).unwrap();
        let mut parents = vec![Vec::new(); n];
        for e in &t.edges {
            parents[e.to].push(e.from);
        }
        prop_assert!(is_acyclic(&parents));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hill_climb_is_acyclic_with_nondecreasing_scores(seed in any::<u64>(), genes in 2usize..6) {
        let data = expression(seed, genes, 60);
        let cfg = EstimateConfig { n_basis: 5, seed, ..EstimateConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = hill_climb(&data, &cfg, &mut rng, 100).unwrap();
        prop_assert!(is_acyclic(r.net.parents()));
        prop_assert!(r.scores.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(r.net.parents().iter().all(|p| p.len() <= cfg.max_parents));
        for (j, i) in r.net.edges() {
            prop_assert!(r.net.curve(j, i).is_some());
        }
    }

    #[test]
    fn bootstrap_output_is_acyclic(seed in any::<u64>()) {
        let data = expression(seed, 4, 40);
        let cfg = EstimateConfig { n_basis: 5, seed, ..EstimateConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = bootstrap_structure(&data, 5, 0.2, &cfg, &mut rng).unwrap();
        prop_assert!(is_acyclic(r.net.parents()));
        for (j, i) in r.net.edges() {
            prop_assert!(r.frequencies[&(j, i)] >= 0.2);
        }
    }
}
