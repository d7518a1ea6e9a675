//! Bootstrap-aggregated regression trees with cross-tree standard
//! deviation as the uncertainty estimate for expected improvement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub bootstrap_fraction: f64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions {
            n_trees: 30,
            max_depth: 12,
            min_samples_leaf: 2,
            bootstrap_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// A fitted forest over feature vectors [w_1 .. w_n, z].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub(crate) trees: Vec<Tree>,
    feature_count: usize,
}

impl RandomForest {
    /// Mean over trees and the cross-tree (population) standard deviation.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.feature_count);
        let n = self.trees.len() as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for tree in &self.trees {
            let p = tree.predict(x);
            sum += p;
            sum_sq += p * p;
        }
        let mean = sum / n;
        let variance = (sum_sq / n - mean * mean).max(0.0);
        (mean, variance.sqrt())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Fits a forest on (features, target) pairs. Trees differ only in their
/// bootstrap resample; every split scans all features.
pub fn rf_fit(
    features: &[Vec<f64>],
    targets: &[f64],
    options: &ForestOptions,
    seed: u64,
) -> Result<RandomForest> {
    if features.is_empty() || targets.is_empty() {
        return Err(Error::invalid("random forest needs non-empty training data"));
    }
    if features.len() != targets.len() {
        return Err(Error::invalid("feature/target length mismatch"));
    }
    let feature_count = features[0].len();
    if features.iter().any(|f| f.len() != feature_count) {
        return Err(Error::invalid("inconsistent feature dimensions"));
    }
    if options.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    if !(0.0 < options.bootstrap_fraction && options.bootstrap_fraction <= 1.0) {
        return Err(Error::invalid("bootstrap fraction must be in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = features.len();
    let sample_size = ((n as f64) * options.bootstrap_fraction).round().max(1.0) as usize;
    let trees = (0..options.n_trees)
        .map(|_| {
            let indices: Vec<usize> = (0..sample_size).map(|_| rng.random_range(0..n)).collect();
            let mut tree = Tree { nodes: Vec::new() };
            build_node(&mut tree, features, targets, indices, 0, options);
            tree
        })
        .collect();
    Ok(RandomForest {
        trees,
        feature_count,
    })
}

fn mean_of(targets: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&i| targets[i]).sum::<f64>() / indices.len() as f64
}

/// Appends the subtree for `indices` and returns its node id.
fn build_node(
    tree: &mut Tree,
    features: &[Vec<f64>],
    targets: &[f64],
    indices: Vec<usize>,
    depth: usize,
    options: &ForestOptions,
) -> usize {
    let make_leaf = |tree: &mut Tree, indices: &[usize]| {
        tree.nodes.push(Node::Leaf {
            value: mean_of(targets, indices),
        });
        tree.nodes.len() - 1
    };
    if depth >= options.max_depth || indices.len() < 2 * options.min_samples_leaf {
        return make_leaf(tree, &indices);
    }

    // best split by squared-error reduction, scanning every feature
    let total_sum: f64 = indices.iter().map(|&i| targets[i]).sum();
    let total_sq: f64 = indices.iter().map(|&i| targets[i] * targets[i]).sum();
    let n = indices.len() as f64;
    let parent_sse = total_sq - total_sum * total_sum / n;
    let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
    let feature_count = features[0].len();
    let mut sorted = indices.clone();
    for feature in 0..feature_count {
        sorted.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("finite features")
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for (count, window) in sorted.windows(2).enumerate() {
            let i = window[0];
            let y = targets[i];
            left_sum += y;
            left_sq += y * y;
            let left_n = (count + 1) as f64;
            let right_n = n - left_n;
            if (count + 1) < options.min_samples_leaf
                || (indices.len() - count - 1) < options.min_samples_leaf
            {
                continue;
            }
            let (xa, xb) = (features[i][feature], features[window[1]][feature]);
            if xa == xb {
                continue; // no boundary between равные values
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / left_n)
                + (right_sq - right_sum * right_sum / right_n);
            let threshold = 0.5 * (xa + xb);
            if best.map_or(true, |(b, _, _)| sse < b) {
                best = Some((sse, feature, threshold));
            }
        }
    }

    match best {
        Some((sse, feature, threshold)) if sse < parent_sse - 1e-15 => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .partition(|&&i| features[i][feature] <= threshold);
            // reserve the split slot, then build children
            tree.nodes.push(Node::Leaf { value: 0.0 });
            let id = tree.nodes.len() - 1;
            let left = build_node(tree, features, targets, left_idx, depth + 1, options);
            let right = build_node(tree, features, targets, right_idx, depth + 1, options);
            tree.nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            id
        }
        _ => make_leaf(tree, &indices),
    }
}
