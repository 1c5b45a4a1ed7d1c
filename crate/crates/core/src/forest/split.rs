//! Gini split criterion and exhaustive threshold search.
//!
//! Candidate splits are ranked by an exact rational score so that ties are
//! real ties, not floating point noise: the weighted child impurity of a
//! split, scaled by `n / 2`, equals `l0*l1/nl + r0*r1/nr`, which is compared
//! by cross-multiplication in `u128`.

use std::cmp::Ordering;

use crate::error::{CorfError, Result};

/// Gini impurity `2 p (1 - p)` of a node with the given class counts.
pub fn gini_impurity(class_counts: [u64; 2]) -> Result<f64> {
    let [c0, c1] = class_counts;
    let n = c0 + c1;
    if n == 0 {
        return Err(CorfError::DegenerateNode);
    }
    let p = c1 as f64 / n as f64;
    Ok(2.0 * p * (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Weighted child impurity as the fraction `num / den`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn node(c0: u64, c1: u64) -> Score {
        // c0*c1/n
        Score {
            num: c0 as u128 * c1 as u128,
            den: (c0 + c1) as u128,
        }
    }

    fn children(l: [u64; 2], r: [u64; 2]) -> Score {
        let nl = (l[0] + l[1]) as u128;
        let nr = (r[0] + r[1]) as u128;
        Score {
            num: l[0] as u128 * l[1] as u128 * nr + r[0] as u128 * r[1] as u128 * nl,
            den: nl * nr,
        }
    }

    pub(crate) fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Best split of a node over one variable, with its exact score.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScoredSplit {
    pub threshold: f64,
    pub score: Score,
    pub decrease: f64,
}

/// Scans `pairs` (sorted in place by value) for the best threshold.
///
/// Returns `None` when the values are constant or no threshold lowers the
/// weighted impurity below the parent's.
pub(crate) fn best_split_pairs(pairs: &mut [(f64, u8)]) -> Option<ScoredSplit> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total1 = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    let total = [n as u64 - total1, total1];
    let parent = Score::node(total[0], total[1]);
    if total[0] == 0 || total[1] == 0 {
        return None;
    }

    let mut left = [0u64; 2];
    let mut best: Option<(Score, usize)> = None;
    for k in 0..n - 1 {
        left[pairs[k].1 as usize] += 1;
        if pairs[k].0 == pairs[k + 1].0 {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let score = Score::children(left, right);
        // strict improvement keeps the smallest threshold on ties
        let better = match &best {
            None => score.cmp(&parent) == Ordering::Less,
            Some((b, _)) => score.cmp(b) == Ordering::Less,
        };
        if better {
            best = Some((score, k));
        }
    }

    best.map(|(score, k)| {
        let (a, b) = (pairs[k].0, pairs[k + 1].0);
        let mut threshold = (a + b) / 2.0;
        if !threshold.is_finite() {
            threshold = a / 2.0 + b / 2.0;
        }
        if threshold >= b {
            threshold = a;
        }
        let nf = n as f64;
        let parent_frac = parent.num as f64 / parent.den as f64;
        let child_frac = score.num as f64 / score.den as f64;
        ScoredSplit {
            threshold,
            score,
            decrease: 2.0 * (parent_frac - child_frac) / nf,
        }
    })
}

/// Best Gini split of `x` against binary labels `y`.
///
/// Thresholds are midpoints between consecutive distinct sorted values;
/// samples with `x <= threshold` go left. Ties are broken towards the
/// smallest threshold.
pub fn find_best_split(x: &[f64], y: &[u8]) -> Result<Option<Split>> {
    if x.len() != y.len() {
        return Err(CorfError::contract(format!(
            "x has {} entries but y has {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(CorfError::contract("need at least two observations"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(CorfError::contract("labels must be 0/1"));
    }
    let mut pairs: Vec<(f64, u8)> = x.iter().copied().zip(y.iter().copied()).collect();
    Ok(best_split_pairs(&mut pairs).map(|s| Split {
        threshold: s.threshold,
        impurity_decrease: s.decrease,
    }))
}
