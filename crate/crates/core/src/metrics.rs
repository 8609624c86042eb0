//! Ranking and confusion-matrix metrics plus split utilities.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub aupr: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: f64,
    pub specificity: f64,
    pub npv: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Names of rates whose denominator was zero (reported as 0).
    pub degenerate: Vec<String>,
}

/// Rank-based (Mann-Whitney) AUC; tied scores contribute half credit.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // mid-ranks for ties
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Area under the precision-recall curve by step-wise summation over
/// descending score thresholds, with tied scores grouped into one step.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPR needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut area = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                tp += 1;
            }
            seen += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Threshold the scores (positive iff score >= threshold) and derive the
/// confusion-based rates. Rates with zero denominators come back as 0 and
/// are listed in `degenerate`.
pub fn confusion_and_rates(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> (ConfusionCounts, MetricReport) {
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let mut degenerate = Vec::new();
    let mut rate = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let recall = rate("recall", tp, tp + fn_);
    let precision = rate("precision", tp, tp + fp);
    let specificity = rate("specificity", tn, tn + fp);
    let npv = rate("npv", tn, tn + fn_);
    let f1 = rate("f1", 2.0 * precision * recall, precision + recall);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = rate("mcc", tp * tn - fp * fn_, mcc_den);
    let report = MetricReport {
        auc: f64::NAN,
        aupr: f64::NAN,
        recall,
        precision,
        f1,
        mcc,
        specificity,
        npv,
        threshold,
        n_pos: c.tp + c.fn_,
        n_neg: c.tn + c.fp,
        degenerate,
    };
    (c, report)
}

/// Full report: areas from the raw scores, rates from the threshold.
pub fn metric_report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricReport> {
    let auc = roc_auc(scores, labels)?;
    let pr = aupr(scores, labels)?;
    let (_, mut report) = confusion_and_rates(scores, labels, threshold);
    report.auc = auc;
    report.aupr = pr;
    Ok(report)
}

/// Seeded shuffle into k near-equal disjoint folds.
pub fn kfold_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if items.len() < k {
        return Err(Error::Config(format!(
            "{} items cannot fill {k} folds",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = rng::derived_rng(seed, "split/kfold");
    order.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(items[idx].clone());
    }
    Ok(folds)
}

/// Seeded 80/20 single split.
pub fn holdout_split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = rng::derived_rng(seed, "split/holdout");
    order.shuffle(&mut rng);
    let n_train = (items.len() as f64 * train_fraction).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    (train, test)
}

/// Equal-population percentile bins over nodes ranked by degree descending;
/// bin 0 holds the most-connected nodes.
pub fn degree_percentile_bins(degrees: &[usize], bins: usize) -> Vec<Vec<usize>> {
    assert!(bins >= 1);
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
    let n = order.len();
    let base = n / bins;
    let extra = n % bins;
    let mut out = Vec::with_capacity(bins);
    let mut at = 0;
    for b in 0..bins {
        let len = base + usize::from(b < extra);
        out.push(order[at..at + len].to_vec());
        at += len;
    }
    out
}

/// Per-bin reports over scored pairs whose side-A node falls in the bin.
/// Bins whose pairs cannot support the metrics are reported as `None`.
pub fn degree_percentile_report(
    scores: &[f64],
    labels: &[u8],
    pair_side_a: &[usize],
    degrees: &[usize],
    bins: usize,
    threshold: f64,
) -> Vec<Option<MetricReport>> {
    let bin_members = degree_percentile_bins(degrees, bins);
    let mut bin_of = vec![0usize; degrees.len()];
    for (b, members) in bin_members.iter().enumerate() {
        for &m in members {
            bin_of[m] = b;
        }
    }
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let idx: Vec<usize> = (0..scores.len())
            .filter(|&i| bin_of[pair_side_a[i]] == b)
            .collect();
        if idx.is_empty() {
            out.push(None);
            continue;
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        out.push(metric_report(&s, &l, threshold).ok());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn auc_perfect_and_ties() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let l = [1, 1, 0, 0];
        assert_eq!(roc_auc(&s, &l).unwrap(), 1.0);
        let s = [0.5; 4];
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    fn threshold_sweep_aupr(scores: &[f64], labels: &[u8]) -> f64 {
        let mut uniq: Vec<f64> = scores.to_vec();
        uniq.sort_by(|a, b| b.partial_cmp(a).unwrap());
        uniq.dedup();
        let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &th in &uniq {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| s >= th && l == 1)
                .count() as f64;
            let pred = scores.iter().filter(|&&s| s >= th).count() as f64;
            let recall = tp / n_pos;
            let precision = tp / pred;
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = seeded_rng(51);
        for _ in 0..50 {
            let n = rng.random_range(5..50usize);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
            if labels.iter().all(|&l| l == 1) || labels.iter().all(|&l| l == 0) {
                continue;
            }
            let got = roc_auc(&scores, &labels).unwrap();
            let want = brute_force_auc(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn aupr_cases_and_oracle() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let l = [1, 1, 0, 0];
        assert_eq!(aupr(&s, &l).unwrap(), 1.0);
        // all-equal scores: single step, area = prevalence
        let s = [0.5; 4];
        assert!((aupr(&s, &l).unwrap() - 0.5).abs() < 1e-15);
        assert!(aupr(&[0.3], &[0]).is_err());

        let mut rng = seeded_rng(52);
        for _ in 0..50 {
            let n = rng.random_range(5..50usize);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            if labels.iter().all(|&l| l == 0) {
                continue;
            }
            let got = aupr(&scores, &labels).unwrap();
            let want = threshold_sweep_aupr(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn confusion_perfect_case() {
        let scores = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let (c, r) = confusion_and_rates(&scores, &labels, 0.5);
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (5, 5, 0, 0));
        assert_eq!(r.mcc, 1.0);
        assert_eq!(r.specificity, 1.0);
        assert_eq!(r.npv, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn all_positive_predictions_flag_degenerate() {
        let scores = [0.9, 0.8];
        let labels = [1, 0];
        let (_, r) = confusion_and_rates(&scores, &labels, 0.0);
        assert_eq!(r.specificity, 0.0);
        assert!(r.degenerate.contains(&"npv".to_string()));
    }

    #[test]
    fn confusion_matches_direct_count() {
        let mut rng = seeded_rng(53);
        let n = 30;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let th = 0.4;
        let (c, _) = confusion_and_rates(&scores, &labels, th);
        let tp = scores.iter().zip(&labels).filter(|(&s, &l)| s >= th && l == 1).count();
        let fp = scores.iter().zip(&labels).filter(|(&s, &l)| s >= th && l == 0).count();
        let tn = scores.iter().zip(&labels).filter(|(&s, &l)| s < th && l == 0).count();
        let fn_ = scores.iter().zip(&labels).filter(|(&s, &l)| s < th && l == 1).count();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_));
        assert_eq!(c.tp + c.fp + c.tn + c.fn_, n);
    }

    #[test]
    fn mcc_symmetric_under_class_swap() {
        let scores = [0.9, 0.7, 0.4, 0.2, 0.6];
        let labels = [1u8, 0, 1, 0, 1];
        let (_, r1) = confusion_and_rates(&scores, &labels, 0.5);
        let flipped_scores: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let flipped_labels: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let (_, r2) = confusion_and_rates(&flipped_scores, &flipped_labels, 0.51);
        assert!((r1.mcc - r2.mcc).abs() < 1e-12);
    }

    #[test]
    fn label_swap_mirrors_auc() {
        let scores = [0.9, 0.7, 0.4, 0.2, 0.6, 0.3];
        let labels = [1u8, 0, 1, 0, 1, 0];
        let a = roc_auc(&scores, &labels).unwrap();
        let swapped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let b = roc_auc(&scores, &swapped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotonic_transform() {
        let scores = [0.9, 0.7, 0.4, 0.2, 0.6, 0.3];
        let labels = [1u8, 0, 1, 0, 1, 0];
        let a = roc_auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 5.0).exp()).collect();
        let b = roc_auc(&transformed, &labels).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kfold_properties() {
        let items: Vec<u32> = (0..10).collect();
        let folds = kfold_split(&items, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<u32> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(folds, kfold_split(&items, 5, 7).unwrap());
        assert!(kfold_split(&items, 1, 7).is_err());
    }

    #[test]
    fn holdout_ratio() {
        let items: Vec<u32> = (0..100).collect();
        let (train, test) = holdout_split(&items, 0.8, 3);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let mut all = [train, test].concat();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn percentile_bins_partition_by_sorted_degree() {
        let degrees = [5, 1, 9, 3, 7, 0, 2, 8, 4, 6];
        let bins = degree_percentile_bins(&degrees, 5);
        assert_eq!(bins.len(), 5);
        let mut all: Vec<usize> = bins.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // sort-based oracle: first bin holds the two largest degrees
        assert_eq!(bins[0], vec![2, 7]);
        // single bin equals the global population
        let one = degree_percentile_bins(&degrees, 1);
        assert_eq!(one[0].len(), 10);
    }
}
