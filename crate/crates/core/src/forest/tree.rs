use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Matrix;
use super::sampling::CandidateSampler;
use super::split::{best_split_pairs, ScoredSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        variable: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class_counts: [u32; 2],
    },
}

/// One unpruned classification tree plus its bootstrap multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub inbag_counts: Vec<u32>,
}

impl Tree {
    /// Vote for class 1: 1, 0, or 0.5 when the leaf is tied.
    pub fn vote<F: Fn(usize) -> f64>(&self, value_of: F) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Internal {
                    variable,
                    threshold,
                    left,
                    right,
                } => {
                    k = if value_of(*variable) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { class_counts } => {
                    return match class_counts[1].cmp(&class_counts[0]) {
                        Ordering::Greater => 1.0,
                        Ordering::Less => 0.0,
                        Ordering::Equal => 0.5,
                    };
                }
            }
        }
    }

    pub fn vote_row(&self, x: &Matrix, row: usize) -> f64 {
        self.vote(|j| x.get(row, j))
    }

    pub fn n_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Internal { .. }))
            .count()
    }

    pub fn add_split_counts(&self, counts: &mut [u64]) {
        for node in &self.nodes {
            if let Node::Internal { variable, .. } = node {
                counts[*variable] += 1;
            }
        }
    }
}

pub(crate) struct GrowConfig<'a> {
    pub mtry: usize,
    pub min_node_size: usize,
    pub sampler: &'a CandidateSampler,
}

/// Grows a tree on a bootstrap sample of the rows of `x`.
pub(crate) fn grow_tree<R: Rng>(x: &Matrix, y: &[u8], cfg: &GrowConfig, rng: &mut R) -> Tree {
    let n = x.nrows();
    let mut inbag_counts = vec![0u32; n];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..n);
        inbag_counts[i] += 1;
        rows.push(i as u32);
    }
    rows.sort_unstable();

    let mut nodes = Vec::new();
    let mut candidates = Vec::with_capacity(cfg.mtry);
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
    // (node slot, rows reaching it)
    let mut stack: Vec<(usize, Vec<u32>)> = Vec::new();
    nodes.push(Node::Leaf {
        class_counts: [0, 0],
    });
    stack.push((0, rows));

    while let Some((slot, rows)) = stack.pop() {
        let ones = rows.iter().filter(|&&i| y[i as usize] == 1).count() as u32;
        let counts = [rows.len() as u32 - ones, ones];
        nodes[slot] = Node::Leaf {
            class_counts: counts,
        };
        if rows.len() <= cfg.min_node_size || counts[0] == 0 || counts[1] == 0 {
            continue;
        }

        cfg.sampler.sample(cfg.mtry, rng, &mut candidates);
        let mut best: Option<(usize, ScoredSplit)> = None;
        for &j in &candidates {
            let col = x.column(j);
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (col[i as usize], y[i as usize])));
            if let Some(s) = best_split_pairs(&mut pairs) {
                let better = match &best {
                    None => true,
                    Some((_, b)) => s.score.cmp(&b.score) == Ordering::Less,
                };
                if better {
                    best = Some((j, s));
                }
            }
        }
        let Some((variable, split)) = best else {
            continue;
        };

        let col = x.column(variable);
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&i| col[i as usize] <= split.threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf {
            class_counts: [0, 0],
        });
        nodes.push(Node::Leaf {
            class_counts: [0, 0],
        });
        nodes[slot] = Node::Internal {
            variable,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((right, right_rows));
        stack.push((left, left_rows));
    }

    Tree {
        nodes,
        inbag_counts,
    }
}
