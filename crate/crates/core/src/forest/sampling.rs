//! Weighted candidate-variable sampling without replacement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};

const SUM_TOL: f64 = 1e-12;

/// Probability vector over variables used to draw split candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights(Vec<f64>);

impl SamplingWeights {
    /// Wraps an already normalized vector.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(CorfError::contract("empty weight vector"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CorfError::contract("weights must be finite and nonnegative"));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SUM_TOL * w.len().max(1) as f64 {
            return Err(CorfError::contract(format!("weights sum to {s}, not 1")));
        }
        Ok(SamplingWeights(w))
    }

    /// Normalizes a nonnegative vector; `None` when its mass is zero.
    pub fn normalized(w: &[f64]) -> Result<Option<Self>> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CorfError::contract("weights must be finite and nonnegative"));
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Ok(None);
        }
        Ok(Some(SamplingWeights(w.iter().map(|v| v / s).collect())))
    }

    pub fn uniform(p: usize) -> Self {
        SamplingWeights(vec![1.0 / p as f64; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j] > 0.0).collect()
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.0[0];
        self.0.iter().all(|&v| v == first)
    }
}

/// Precomputed sampler for repeated candidate draws from fixed weights.
///
/// Draws are sequential weighted sampling without replacement: each pick is
/// made with probability proportional to the weight among the indices not
/// yet picked. While the picked mass is small this is done by rejection
/// against the cumulative table; once it passes half the total the sampler
/// switches to an explicit scan of the remaining indices.
#[derive(Debug, Clone)]
pub struct CandidateSampler {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    positive: Vec<usize>,
}

impl CandidateSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CorfError::contract("weights must be finite and nonnegative"));
        }
        let positive: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 0.0).collect();
        if positive.is_empty() {
            return Err(CorfError::contract("all-zero sampling weights"));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(CandidateSampler {
            weights: weights.to_vec(),
            cumulative,
            positive,
        })
    }

    pub fn n_positive(&self) -> usize {
        self.positive.len()
    }

    /// Draws up to `mtry` distinct indices, returned in ascending order.
    pub fn sample<R: Rng + ?Sized>(&self, mtry: usize, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        if self.positive.len() <= mtry {
            out.extend_from_slice(&self.positive);
            return;
        }
        let total = *self.cumulative.last().unwrap();
        let last_positive = *self.positive.last().unwrap();
        let mut picked_mass = 0.0;
        while out.len() < mtry && picked_mass <= 0.5 * total {
            let u = rng.gen::<f64>() * total;
            let j = self
                .cumulative
                .partition_point(|&c| c <= u)
                .min(last_positive);
            if !out.contains(&j) {
                out.push(j);
                picked_mass += self.weights[j];
            }
        }
        while out.len() < mtry {
            let remaining: f64 = self
                .positive
                .iter()
                .filter(|j| !out.contains(j))
                .map(|&j| self.weights[j])
                .sum();
            let mut u = rng.gen::<f64>() * remaining;
            let mut pick = None;
            for &j in &self.positive {
                if out.contains(&j) {
                    continue;
                }
                pick = Some(j);
                if u < self.weights[j] {
                    break;
                }
                u -= self.weights[j];
            }
            out.push(pick.expect("positive mass remains"));
        }
        out.sort_unstable();
    }
}

/// Draws at most `mtry` distinct candidate indices from `weights`.
///
/// Zero-weight indices are never returned; when fewer than `mtry` indices
/// carry positive weight all of them are returned.
pub fn sample_candidates<R: Rng + ?Sized>(
    weights: &SamplingWeights,
    mtry: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if mtry == 0 {
        return Err(CorfError::contract("mtry must be at least 1"));
    }
    let sampler = CandidateSampler::new(weights.as_slice())?;
    let mut out = Vec::with_capacity(mtry);
    sampler.sample(mtry, rng, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_single_candidate() {
        let w = SamplingWeights::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_candidates(&w, 1, &mut rng).unwrap(), vec![0]);
            assert_eq!(sample_candidates(&w, 3, &mut rng).unwrap(), vec![0]);
        }
    }

    #[test]
    fn zero_weight_never_drawn() {
        let w = SamplingWeights::normalized(&[0.3, 0.0, 0.2, 0.4, 0.0, 0.1])
            .unwrap()
            .unwrap();
        let sampler = CandidateSampler::new(w.as_slice()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut out = Vec::new();
        for _ in 0..100_000 {
            sampler.sample(2, &mut rng, &mut out);
            assert_eq!(out.len(), 2);
            assert!(!out.contains(&1) && !out.contains(&4));
            assert!(out[0] < out[1]);
        }
    }

    #[test]
    fn sequential_probabilities_match_enumeration() {
        // two draws from [0.5, 0.3, 0.2]: P(pair) = w_a w_b/(1-w_a) + w_b w_a/(1-w_b)
        let w = [0.5, 0.3, 0.2];
        let pair = |a: usize, b: usize| w[a] * w[b] / (1.0 - w[a]) + w[b] * w[a] / (1.0 - w[b]);
        let sampler = CandidateSampler::new(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let reps = 200_000;
        let mut out = Vec::new();
        for _ in 0..reps {
            sampler.sample(2, &mut rng, &mut out);
            let missing = (0..3).find(|j| !out.contains(j)).unwrap();
            counts[missing] += 1;
        }
        let expected = [pair(1, 2), pair(0, 2), pair(0, 1)];
        for k in 0..3 {
            let freq = counts[k] as f64 / reps as f64;
            assert!((freq - expected[k]).abs() < 0.005, "{k}: {freq} vs {}", expected[k]);
        }
    }

    #[test]
    fn all_zero_weights_rejected() {
        assert!(CandidateSampler::new(&[0.0, 0.0]).is_err());
        assert!(SamplingWeights::normalized(&[0.0, 0.0]).unwrap().is_none());
        assert!(SamplingWeights::new(vec![0.5, 0.4]).is_err());
    }
}
