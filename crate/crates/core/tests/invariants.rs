//! Randomized invariants over the numeric and data-handling surface.

use std::collections::BTreeSet;

use difflink::diffusion::NoiseSchedule;
use difflink::graph::HeteroGraph;
use difflink::metapath::{build_pairs_via_bridge, enforce_threshold};
use difflink::metrics::{aupr, holdout_split, kfold_split, metric_report, roc_auc};
use proptest::prelude::*;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((-10.0f64..10.0, 0u8..2), 2..60).prop_map(|v| {
        let mut scores: Vec<f64> = v.iter().map(|&(s, _)| s).collect();
        let mut labels: Vec<u8> = v.iter().map(|&(_, l)| l).collect();
        // both classes must appear
        if labels.iter().all(|&l| l == 0) {
            labels[0] = 1;
        }
        if labels.iter().all(|&l| l == 1) {
            labels[0] = 0;
        }
        // quantize some scores to force ties
        for (i, s) in scores.iter_mut().enumerate() {
            if i % 3 == 0 {
                *s = s.round();
            }
        }
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn auc_and_aupr_stay_in_unit_interval((scores, labels) in scores_and_labels()) {
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let ap = aupr(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn auc_is_invariant_under_monotone_transform((scores, labels) in scores_and_labels()) {
        let a = roc_auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (s / 4.0).tanh()).collect();
        let b = roc_auc(&squashed, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn label_swap_mirrors_auc((scores, labels) in scores_and_labels()) {
        let a = roc_auc(&scores, &labels).unwrap();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let b = roc_auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mcc_stays_in_range((scores, labels) in scores_and_labels(), th in -5.0f64..5.0) {
        let r = metric_report(&scores, &labels, th).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r.mcc));
        prop_assert!((0.0..=1.0).contains(&r.precision));
        prop_assert!((0.0..=1.0).contains(&r.recall));
        prop_assert!((0.0..=1.0).contains(&r.specificity));
        prop_assert!((0.0..=1.0).contains(&r.npv));
    }

    #[test]
    fn kfold_partitions_exactly(n in 5usize..120, k in 2usize..6, seed in 0u64..50) {
        let items: Vec<usize> = (0..n).collect();
        let folds = kfold_split(&items, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen: Vec<usize> = folds.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, items.clone());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(max - min <= 1);
    }

    #[test]
    fn holdout_partitions_exactly(n in 2usize..200, seed in 0u64..50) {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = holdout_split(&items, 0.8, seed);
        let mut seen = [train.clone(), test.clone()].concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, items);
        prop_assert_eq!(train.len(), (n as f64 * 0.8).round() as usize);
    }

    #[test]
    fn threshold_lists_draw_from_true_neighbors(
        edges in prop::collection::btree_set((0usize..12, 0usize..12), 0..40),
        tau in 1usize..6,
        seed in 0u64..20,
    ) {
        let mut sym = BTreeSet::new();
        for &(u, v) in &edges {
            if u != v {
                sym.insert((u, v));
                sym.insert((v, u));
            }
        }
        let lists = enforce_threshold(&sym, 12, tau, seed, "p").unwrap();
        for (u, l) in lists.iter().enumerate() {
            let truth: BTreeSet<usize> =
                sym.iter().filter(|&&(a, _)| a == u).map(|&(_, b)| b).collect();
            if truth.is_empty() {
                prop_assert!(l.is_empty());
            } else {
                prop_assert_eq!(l.len(), tau);
                prop_assert!(l.iter().all(|v| truth.contains(v)));
                if truth.len() <= tau {
                    // replication path must still cover every neighbor
                    let covered: BTreeSet<usize> = l.iter().copied().collect();
                    prop_assert_eq!(covered, truth);
                }
            }
        }
    }

    #[test]
    fn bridge_pairs_are_symmetric_and_irreflexive(
        members in prop::collection::vec(prop::collection::vec(0usize..10, 0..5), 0..8),
    ) {
        let pairs = build_pairs_via_bridge(&members);
        for &(u, v) in &pairs {
            prop_assert!(u != v);
            prop_assert!(pairs.contains(&(v, u)));
        }
    }

    #[test]
    fn schedule_invariants(steps in 4usize..200) {
        let s = NoiseSchedule::build(steps, 0.9999, 0.98).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
            prop_assert!(s.alpha_bar(t) <= s.alpha(1));
            prop_assert!(s.sigma2(t) >= 0.0 && s.sigma2(t) < 1.0);
        }
        let idx = s.sample_steps();
        prop_assert_eq!(idx[0], steps);
        prop_assert!(idx.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(idx[3] >= 1);
    }

    #[test]
    fn graph_dedups_and_reports_edges(
        edges in prop::collection::vec((0usize..8, 0usize..8), 0..60),
    ) {
        let g = HeteroGraph::from_indexed_edges(8, 8, &edges).unwrap();
        let uniq: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
        prop_assert_eq!(g.edges().len(), uniq.len());
        for &(a, b) in &uniq {
            prop_assert!(g.has_edge(a, b));
        }
    }
}
