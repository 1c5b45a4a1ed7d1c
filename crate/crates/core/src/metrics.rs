//! Evaluation statistics and co-data preparation helpers.

use std::cmp::Ordering;

use crate::error::{CorfError, Result};

/// Scores paired with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(CorfError::contract(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(CorfError::contract("scores must be finite"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(CorfError::contract("labels must be 0/1"));
        }
        Ok(ScoredLabels { scores, labels })
    }

    fn class_sizes(&self) -> (u64, u64) {
        let n1 = self.labels.iter().filter(|&&l| l == 1).count() as u64;
        (self.labels.len() as u64 - n1, n1)
    }
}

/// Area under the ROC curve in Mann-Whitney form.
///
/// Computed from midranks: twice the sum of positive-class ranks is an
/// integer, so the result is the exact ratio
/// `(concordant + 0.5 tied) / (n1 n0)` rounded once.
pub fn auc(s: &ScoredLabels) -> Result<f64> {
    let (n0, n1) = s.class_sizes();
    if n0 == 0 || n1 == 0 {
        return Err(CorfError::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    // twice the rank sum of class 1, ranks starting at 1
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && s.scores[order[end + 1]] == s.scores[order[start]] {
            end += 1;
        }
        let twice_midrank = (start + 1 + end + 1) as u128;
        let ones = order[start..=end]
            .iter()
            .filter(|&&i| s.labels[i] == 1)
            .count() as u128;
        twice_rank_sum += ones * twice_midrank;
        start = end + 1;
    }
    let n1 = n1 as u128;
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(twice_u as f64 / (2 * n1 * n0 as u128) as f64)
}

pub fn brier_score(s: &ScoredLabels) -> Result<f64> {
    if s.scores.is_empty() {
        return Err(CorfError::contract("no scores"));
    }
    if s.scores.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CorfError::contract("Brier score needs scores in [0,1]"));
    }
    let sum: f64 = s
        .scores
        .iter()
        .zip(s.labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum();
    Ok(sum / s.scores.len() as f64)
}

/// Misclassification rate; a score equal to `cutoff` predicts class 1.
pub fn error_rate(s: &ScoredLabels, cutoff: f64) -> Result<f64> {
    if s.scores.is_empty() {
        return Err(CorfError::contract("no scores"));
    }
    let wrong = s
        .scores
        .iter()
        .zip(s.labels)
        .filter(|(&p, &y)| u8::from(p >= cutoff) != y)
        .count();
    Ok(wrong as f64 / s.scores.len() as f64)
}

/// One point of an empirical ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve over descending distinct score thresholds, starting at (0,0).
pub fn roc_curve(s: &ScoredLabels) -> Result<Vec<RocPoint>> {
    let (n0, n1) = s.class_sizes();
    if n0 == 0 || n1 == 0 {
        return Err(CorfError::invalid("ROC curve needs both classes"));
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut k = 0;
    while k < order.len() {
        let t = s.scores[order[k]];
        while k < order.len() && s.scores[order[k]] == t {
            if s.labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / n1 as f64,
            fpr: fp as f64 / n0 as f64,
        });
    }
    Ok(points)
}

/// Counts of discordant pairs via merge sort; `v` ends up sorted.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tied pairs within runs of equal values of a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for k in 1..=sorted.len() {
        if k < sorted.len() && sorted[k] == sorted[k - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Kendall's tau-b with tie correction, in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(CorfError::contract("kendall_tau needs equal-length vectors"));
    }
    if n < 2 {
        return Err(CorfError::contract("kendall_tau needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CorfError::contract("kendall_tau needs finite values"));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tx = tied_pairs(&xs);
    let txy = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = count_inversions(&mut ys, &mut buf);
    let ty = tied_pairs(&ys);

    if tx == n0 || ty == n0 {
        return Err(CorfError::UndefinedCorrelation(
            "a vector is entirely tied".into(),
        ));
    }
    // concordant - discordant
    let s = n0 as i64 - tx as i64 - ty as i64 + txy as i64 - 2 * swaps as i64;
    Ok(s as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt())
}

/// Indices of the `k` largest counts, in rank order; ties go to the lower index.
pub fn select_top_by_counts(counts: &[u64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > counts.len() {
        return Err(CorfError::contract(format!(
            "k = {k} outside 1..={}",
            counts.len()
        )));
    }
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Mean over unordered pairs of `|A ∩ B| / size` for sets of equal `size`.
pub fn selection_overlap(sets: &[Vec<usize>], size: usize) -> Result<f64> {
    if sets.len() < 2 {
        return Err(CorfError::contract("need at least two selections"));
    }
    if size == 0 {
        return Err(CorfError::contract("selection size must be positive"));
    }
    let mut sorted = Vec::with_capacity(sets.len());
    for s in sets {
        let mut v = s.clone();
        v.sort_unstable();
        v.dedup();
        if v.len() != size || s.len() != size {
            return Err(CorfError::contract(format!(
                "selection has {} distinct entries, expected {size}",
                v.len()
            )));
        }
        sorted.push(v);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..sorted.len() {
        for b in a + 1..sorted.len() {
            total += intersection_size(&sorted[a], &sorted[b]) as f64 / size as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Mean pairwise overlap of ranking prefixes, one value per requested size.
pub fn overlap_by_size(rankings: &[Vec<usize>], sizes: &[usize]) -> Result<Vec<f64>> {
    sizes
        .iter()
        .map(|&s| {
            let prefixes: Vec<Vec<usize>> = rankings
                .iter()
                .map(|r| {
                    r.get(..s).map(<[usize]>::to_vec).ok_or_else(|| {
                        CorfError::contract(format!("ranking shorter than {s}"))
                    })
                })
                .collect::<Result<_>>()?;
            selection_overlap(&prefixes, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sl<'a>(s: &'a [f64], l: &'a [u8]) -> ScoredLabels<'a> {
        ScoredLabels::new(s, l).unwrap()
    }

    fn auc_pairs(s: &[f64], l: &[u8]) -> f64 {
        let (mut c, mut t, mut n) = (0u64, 0u64, 0u64);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] == 1 && l[j] == 0 {
                    n += 1;
                    if s[i] > s[j] {
                        c += 1;
                    } else if s[i] == s[j] {
                        t += 1;
                    }
                }
            }
        }
        (2 * c + t) as f64 / (2 * n) as f64
    }

    fn kendall_pairs(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut s, mut tx, mut ty) = (0i64, 0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = (x[i] - x[j]).signum() as i64 * i64::from(x[i] != x[j]);
                let dy = (y[i] - y[j]).signum() as i64 * i64::from(y[i] != y[j]);
                s += dx * dy;
                tx += u64::from(dx == 0);
                ty += u64::from(dy == 0);
            }
        }
        let n0 = (n * (n - 1) / 2) as u64;
        s as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt()
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auc(&sl(&s, &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&sl(&s, &[1, 0, 1, 0])).unwrap(), 0.75);
        assert_eq!(auc(&sl(&[0.3; 4], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert!(auc(&sl(&s, &[1, 1, 1, 1])).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&sl(&[1.0, 0.0], &[1, 0])).unwrap(), 0.0);
        assert_eq!(brier_score(&sl(&[0.5, 0.5], &[0, 1])).unwrap(), 0.25);
        assert!((brier_score(&sl(&[0.8, 0.3], &[1, 0])).unwrap() - 0.065).abs() < 1e-15);
        assert!(brier_score(&sl(&[1.2], &[1])).is_err());
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&sl(&[0.9, 0.1], &[1, 0]), 0.5).unwrap(), 0.0);
        assert_eq!(error_rate(&sl(&[0.1, 0.9], &[1, 0]), 0.5).unwrap(), 1.0);
        let r = error_rate(&sl(&[0.6, 0.4, 0.5], &[1, 0, 0]), 0.5).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        let t = kendall_tau(&[1., 1., 2.], &[1., 2., 3.]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            kendall_tau(&[1., 1., 1.], &[1., 2., 3.]),
            Err(CorfError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn top_by_counts() {
        let mut a = select_top_by_counts(&[5, 1, 3], 2).unwrap();
        a.sort();
        assert_eq!(a, vec![0, 2]);
        assert_eq!(select_top_by_counts(&[2, 2, 2], 1).unwrap(), vec![0]);
        assert!(select_top_by_counts(&[1], 2).is_err());
        assert!(select_top_by_counts(&[1], 0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let a: Vec<usize> = (1..=10).collect();
        let b: Vec<usize> = (6..=15).collect();
        let c: Vec<usize> = (20..30).collect();
        assert_eq!(selection_overlap(&[a.clone(), a.clone()], 10).unwrap(), 1.0);
        assert_eq!(selection_overlap(&[a.clone(), c], 10).unwrap(), 0.0);
        assert_eq!(selection_overlap(&[a.clone(), b], 10).unwrap(), 0.5);
        assert!(selection_overlap(&[a.clone(), vec![1, 2]], 10).is_err());
        let r = overlap_by_size(&[a.clone(), a], &[5, 10]).unwrap();
        assert_eq!(r, vec![1.0, 1.0]);
    }

    #[test]
    fn roc_is_monotone_from_origin_to_corner() {
        let s = [0.9, 0.7, 0.7, 0.4, 0.2, 0.2];
        let l = [1, 0, 1, 1, 0, 0];
        let roc = roc_curve(&sl(&s, &l)).unwrap();
        assert_eq!((roc[0].tpr, roc[0].fpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
        for w in roc.windows(2) {
            assert!(w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr);
        }
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..8).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting((s, l) in scored()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            prop_assert_eq!(auc(&sl(&s, &l)).unwrap(), auc_pairs(&s, &l));
        }

        #[test]
        fn auc_flip_and_monotone_transform((s, l) in scored()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let a = auc(&sl(&s, &l)).unwrap();
            let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
            let b = auc(&sl(&s, &flipped)).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(a, auc(&sl(&t, &l)).unwrap());
        }

        #[test]
        fn kendall_matches_pair_counting(
            xy in (2usize..60).prop_flat_map(|n| (
                prop::collection::vec(0i32..6, n),
                prop::collection::vec(0i32..6, n),
            ))
        ) {
            let x: Vec<f64> = xy.0.iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = xy.1.iter().map(|&v| v as f64).collect();
            let fast = kendall_tau(&x, &y);
            let all_tied = |v: &[f64]| v.iter().all(|&a| a == v[0]);
            if all_tied(&x) || all_tied(&y) {
                prop_assert!(fast.is_err());
            } else {
                let fast = fast.unwrap();
                prop_assert_eq!(fast, kendall_pairs(&x, &y));
                prop_assert_eq!(fast, kendall_tau(&y, &x).unwrap());
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                prop_assert!((kendall_tau(&x, &neg).unwrap() + fast).abs() < 1e-15);
            }
        }

        #[test]
        fn top_k_matches_full_sort(v in prop::collection::vec(0u64..20, 1..50), k in 1usize..50) {
            prop_assume!(k <= v.len());
            let mut oracle: Vec<(u64, usize)> = v.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = oracle[..k].iter().map(|p| p.1).collect();
            prop_assert_eq!(select_top_by_counts(&v, k).unwrap(), expect);
        }

        #[test]
        fn brier_and_error_are_permutation_invariant((s, l) in scored(), rot in 0usize..40) {
            let s: Vec<f64> = s.iter().map(|v| v / 2.0).collect();
            let r = rot % s.len();
            let mut s2 = s.clone();
            let mut l2 = l.clone();
            s2.rotate_left(r);
            l2.rotate_left(r);
            prop_assert!((brier_score(&sl(&s, &l)).unwrap() - brier_score(&sl(&s2, &l2)).unwrap()).abs() < 1e-12);
            prop_assert_eq!(error_rate(&sl(&s, &l), 0.5).unwrap(), error_rate(&sl(&s2, &l2), 0.5).unwrap());
        }
    }
}
