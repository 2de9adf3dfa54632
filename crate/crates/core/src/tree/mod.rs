//! Regression trees: the weighted-sampling gradient booster, a CART
//! surrogate, and shared node storage.

mod cart;
mod gbrt;

pub use cart::{fit_cart, fit_cart_weighted, CartParams};
pub use gbrt::{fit_gbrt, fit_gbrt_weighted, BoostParams};

use serde::{Deserialize, Serialize};

/// A node in an arena-allocated tree. Internal nodes send `x[feature] <= threshold`
/// to `left` and everything else to `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Prediction if the walk stopped here. Only leaves contribute to the
    /// model output; internal values are kept for surrogate rule ranking.
    pub value: f64,
    pub gain: f64,
    /// Sum of sample weights reaching this node.
    pub cover: f64,
    pub depth: usize,
}

impl TreeNode {
    pub fn leaf(value: f64, cover: f64, depth: usize) -> Self {
        Self { feature: None, threshold: f64::NAN, left: None, right: None, value, gain: 0.0, cover, depth }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root is at index 0.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature, n.left, n.right) {
                (Some(f), Some(l), Some(r)) => i = if x[f] <= n.threshold { l } else { r },
                _ => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
}

impl TreeEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Prediction using only the first `n` trees.
    pub fn predict_with(&self, x: &[f64], n: usize) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().take(n).map(|t| t.predict(x)).sum::<f64>()
    }
}
