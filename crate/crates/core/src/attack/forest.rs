//! Random forest of Gini decision trees.
//!
//! Each tree is grown on its own bootstrap resample with `⌊√F⌋` candidate
//! features per node. Per-tree seeds are derived from the master seed and
//! the tree index, so trees are trained in parallel without changing the
//! result.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AttackDataset;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, EngineRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            max_depth: 12,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        member: bool,
        member_fraction: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Child for `x[feature] <= threshold`.
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// `nodes[0]` is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { member, .. } => return *member,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Grows a tree on `rows` (indices into `xs`, repeats allowed).
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[bool],
        rows: Vec<usize>,
        max_depth: usize,
        rng: &mut EngineRng,
    ) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        tree.grow(xs, ys, rows, 0, max_depth, rng);
        tree
    }

    fn grow(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[bool],
        rows: Vec<usize>,
        depth: usize,
        max_depth: usize,
        rng: &mut EngineRng,
    ) -> usize {
        let id = self.nodes.len();
        let members = rows.iter().filter(|&&r| ys[r]).count();
        let leaf = Node::Leaf {
            // ties go to nonmember
            member: 2 * members > rows.len(),
            member_fraction: members as f64 / rows.len().max(1) as f64,
        };
        self.nodes.push(leaf);
        if depth >= max_depth || members == 0 || members == rows.len() || rows.len() < 2 {
            return id;
        }
        let n_features = xs[0].len();
        let n_candidates = ((n_features as f64).sqrt().floor() as usize).max(1);
        let candidates = sample(rng, n_features, n_candidates).into_vec();

        let parent = gini(members, rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in candidates {
            if let Some((score, threshold)) = best_split(xs, ys, &rows, feature) {
                if score < parent - 1e-12 && best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, feature, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| xs[r][feature] <= threshold);
        let left = self.grow(xs, ys, left_rows, depth + 1, max_depth, rng);
        let right = self.grow(xs, ys, right_rows, depth + 1, max_depth, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn gini(members: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = members as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Lowest weighted child Gini over midpoints between distinct sorted values.
pub(crate) fn best_split(
    xs: &[Vec<f64>],
    ys: &[bool],
    rows: &[usize],
    feature: usize,
) -> Option<(f64, f64)> {
    let mut sorted: Vec<(f64, bool)> = rows.iter().map(|&r| (xs[r][feature], ys[r])).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let total_members = sorted.iter().filter(|s| s.1).count();
    let mut left_members = 0;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        if sorted[i].1 {
            left_members += 1;
        }
        if sorted[i].0 == sorted[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        let nr = n - nl;
        let score = (nl as f64 * gini(left_members, nl)
            + nr as f64 * gini(total_members - left_members, nr))
            / n as f64;
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<DecisionTree>,
    pub n_estimators: usize,
    pub bootstrap_seed: u64,
    pub feature_dim: usize,
}

pub fn rf_train(data: &AttackDataset, cfg: &ForestConfig, seed: u64) -> Result<ForestParams> {
    rf_train_arrays(&data.features(), &data.labels(), cfg, seed)
}

pub fn rf_train_arrays(
    xs: &[Vec<f64>],
    ys: &[bool],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ForestParams> {
    if cfg.n_estimators == 0 {
        return Err(Error::invalid("n_estimators", "must be at least 1"));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("attack data", "features and labels must be non-empty and aligned"));
    }
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        return Err(Error::SingleClass);
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "attack features",
            expected: dim,
            actual: bad.len(),
        });
    }
    let n = xs.len();
    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("tree-{t}")));
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit(xs, ys, rows, cfg.max_depth, &mut rng)
        })
        .collect();
    Ok(ForestParams {
        trees,
        n_estimators: cfg.n_estimators,
        bootstrap_seed: seed,
        feature_dim: dim,
    })
}

/// Majority vote; ties go to nonmember. Returns the label and the fraction of
/// trees that voted for it.
pub fn rf_predict(forest: &ForestParams, features: &[f64]) -> Result<(bool, f64)> {
    if features.len() != forest.feature_dim {
        return Err(Error::DimensionMismatch {
            what: "attack features",
            expected: forest.feature_dim,
            actual: features.len(),
        });
    }
    let votes = forest.trees.iter().filter(|t| t.predict(features)).count();
    let n = forest.trees.len();
    let member = 2 * votes > n;
    let support = if member { votes } else { n - votes };
    Ok((member, support as f64 / n as f64))
}

pub fn rf_predict_labels(forest: &ForestParams, features: &[Vec<f64>]) -> Result<Vec<bool>> {
    features
        .iter()
        .map(|x| rf_predict(forest, x).map(|(label, _)| label))
        .collect()
}
