//! Bagged ensemble of unpruned Gini classification trees whose split
//! candidates are drawn from a per-variable probability vector.

mod data;
mod sampling;
mod split;
mod tree;

pub use data::{Matrix, PrimaryDataset};
pub use sampling::{sample_candidates, CandidateSampler, SamplingWeights};
pub use split::{find_best_split, gini_impurity, Split};
pub use tree::{Node, Tree};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CorfError, Result};
use tree::{grow_tree, GrowConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    /// Candidates per node; `None` means `ceil(sqrt(P))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub seed: u64,
    /// `None` means uniform sampling.
    pub sampling_weights: Option<SamplingWeights>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 5000,
            mtry: None,
            min_node_size: 2,
            seed: 1,
            sampling_weights: None,
        }
    }
}

impl ForestParams {
    pub fn default_mtry(p: usize) -> usize {
        ((p as f64).sqrt().ceil() as usize).max(1)
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| Self::default_mtry(p))
    }

    pub fn validate(&self) -> Result<()> {
        if self.ntree == 0 {
            return Err(CorfError::contract("ntree must be at least 1"));
        }
        if self.min_node_size == 0 {
            return Err(CorfError::contract("min_node_size must be at least 1"));
        }
        if self.mtry == Some(0) {
            return Err(CorfError::contract("mtry must be at least 1"));
        }
        Ok(())
    }
}

/// Fitted forest. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Parameters with `mtry` resolved to the value actually used.
    pub params: ForestParams,
    pub n_variables: usize,
    /// Number of internal nodes splitting on each variable, over all trees.
    pub split_counts: Vec<u64>,
    pub total_splits: u64,
}

impl Forest {
    /// Assembles a forest from already grown trees.
    pub fn from_trees(trees: Vec<Tree>, params: ForestParams, n_variables: usize) -> Result<Self> {
        let mut split_counts = vec![0u64; n_variables];
        for t in &trees {
            for node in &t.nodes {
                if let Node::Internal {
                    variable,
                    left,
                    right,
                    ..
                } = node
                {
                    if *variable >= n_variables || *left >= t.nodes.len() || *right >= t.nodes.len()
                    {
                        return Err(CorfError::contract("tree references missing node or variable"));
                    }
                }
            }
            t.add_split_counts(&mut split_counts);
        }
        let total_splits = split_counts.iter().sum();
        Ok(Forest {
            trees,
            params,
            n_variables,
            split_counts,
            total_splits,
        })
    }

    pub fn ntree(&self) -> usize {
        self.trees.len()
    }
}

/// Per-tree random stream keyed by `(seed, tree index)`.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Grows `params.ntree` trees on bootstrap samples of `data`.
///
/// Trees are grown in parallel on the current rayon pool. Each tree draws
/// from its own stream, so the result does not depend on the thread count.
pub fn fit_forest(data: &PrimaryDataset, params: &ForestParams) -> Result<Forest> {
    params.validate()?;
    let p = data.n_variables();
    let [c0, c1] = data.class_counts();
    if c0 == 0 || c1 == 0 {
        return Err(CorfError::SingleClass);
    }
    let mut mtry = params.resolved_mtry(p);
    if mtry > p {
        log::warn!("mtry {mtry} exceeds the {p} available variables; clamping");
        mtry = p;
    }
    let weights = match &params.sampling_weights {
        Some(w) if w.len() != p => {
            return Err(CorfError::contract(format!(
                "{} sampling weights for {p} variables",
                w.len()
            )))
        }
        Some(w) => w.as_slice().to_vec(),
        None => vec![1.0 / p as f64; p],
    };
    let sampler = CandidateSampler::new(&weights)?;
    let cfg = GrowConfig {
        mtry,
        min_node_size: params.min_node_size,
        sampler: &sampler,
    };

    let trees: Vec<Tree> = (0..params.ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            grow_tree(data.x(), data.y(), &cfg, &mut rng)
        })
        .collect();

    let mut used = params.clone();
    used.mtry = Some(mtry);
    Forest::from_trees(trees, used, p)
}

/// Fraction of trees voting class 1 for each row of `x`.
pub fn predict_forest(forest: &Forest, x: &Matrix) -> Result<Vec<f64>> {
    if x.ncols() != forest.n_variables {
        return Err(CorfError::contract(format!(
            "matrix has {} columns, forest expects {}",
            x.ncols(),
            forest.n_variables
        )));
    }
    let ntree = forest.ntree() as f64;
    Ok((0..x.nrows())
        .into_par_iter()
        .map(|i| forest.trees.iter().map(|t| t.vote_row(x, i)).sum::<f64>() / ntree)
        .collect())
}

/// Out-of-bag class-1 vote fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    /// `None` for samples that were in-bag for every tree.
    pub votes: Vec<Option<f64>>,
    /// Number of trees for which each sample was out-of-bag.
    pub coverage: Vec<u32>,
    pub ntree: usize,
}

impl OobPrediction {
    /// Mean over samples of the fraction of trees a sample is out-of-bag for.
    pub fn mean_oob_fraction(&self) -> f64 {
        let n = self.coverage.len() as f64;
        self.coverage.iter().map(|&c| c as f64).sum::<f64>() / (n * self.ntree as f64)
    }

    /// Indices and votes of samples with a defined oob vote.
    pub fn defined(&self) -> (Vec<usize>, Vec<f64>) {
        self.votes
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .unzip()
    }
}

pub fn oob_probabilities(forest: &Forest, data: &PrimaryDataset) -> Result<OobPrediction> {
    let n = data.n_samples();
    if forest.trees.iter().any(|t| t.inbag_counts.len() != n) {
        return Err(CorfError::contract(
            "dataset is not the one the forest was trained on",
        ));
    }
    if data.n_variables() != forest.n_variables {
        return Err(CorfError::contract("variable count mismatch"));
    }
    let x = data.x();
    let per_sample: Vec<(Option<f64>, u32)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            let mut cov = 0u32;
            for t in forest.trees.iter().filter(|t| t.inbag_counts[i] == 0) {
                sum += t.vote_row(x, i);
                cov += 1;
            }
            ((cov > 0).then(|| sum / cov as f64), cov)
        })
        .collect();
    let (votes, coverage) = per_sample.into_iter().unzip();
    Ok(OobPrediction {
        votes,
        coverage,
        ntree: forest.ntree(),
    })
}
