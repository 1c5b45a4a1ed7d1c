//! Clamped B-spline bases with quantile-placed interior knots.

use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub degree: usize,
    /// Number of basis functions.
    pub q: usize,
    /// Full knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    /// Basis evaluated at the construction data, one row per observation.
    pub evaluation: Vec<Vec<f64>>,
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Builds a degree-`degree` basis with `q` functions over the range of `x`.
///
/// Interior knots sit at equally spaced quantiles of `x`. Coincident
/// quantiles are merged, which lowers `q`; at least one interior knot is
/// kept so that `q >= degree + 2`.
pub fn build_bspline_basis(x: &[f64], q: usize, degree: usize) -> Result<SplineBasis> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(CorfError::contract("spline input must be finite and nonempty"));
    }
    if q < degree + 2 {
        return Err(CorfError::contract(format!(
            "q = {q} is below degree + 2 = {}",
            degree + 2
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let (lower, upper) = (sorted[0], sorted[sorted.len() - 1]);
    if lower == upper {
        return Err(CorfError::DegenerateCoData(String::new()));
    }

    let n_interior = q - degree - 1;
    let mut interior: Vec<f64> = (1..=n_interior)
        .map(|k| quantile(&sorted, k as f64 / (n_interior + 1) as f64))
        .filter(|&t| t > lower && t < upper)
        .collect();
    interior.dedup();
    if interior.is_empty() {
        interior.push(lower + (upper - lower) / 2.0);
    }
    let q_used = interior.len() + degree + 1;
    if q_used < q {
        log::warn!("only {} distinct interior knots available; using q = {q_used}", interior.len());
    }

    let mut knots = vec![lower; degree + 1];
    knots.extend(&interior);
    knots.extend(std::iter::repeat_n(upper, degree + 1));

    let mut basis = SplineBasis {
        degree,
        q: q_used,
        knots,
        lower,
        upper,
        evaluation: Vec::new(),
    };
    basis.evaluation = x.iter().map(|&v| basis.evaluate(v)).collect();
    Ok(basis)
}

impl SplineBasis {
    /// All `q` basis values at `x`, clamped to the training range.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.lower, self.upper);
        let p = self.degree;
        let t = &self.knots;
        // span index s with t[s] <= x < t[s+1], using the last nonempty span at the upper end
        let mut s = t.partition_point(|&k| k <= x).saturating_sub(1);
        if s >= self.q {
            s = self.q - 1;
        }
        // de Boor's triangular scheme for the p+1 nonzero functions
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.q];
        for (r, v) in n.into_iter().enumerate() {
            out[s - p + r] = v;
        }
        out
    }
}
