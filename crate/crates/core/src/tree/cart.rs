use serde::{Deserialize, Serialize};

use super::{Tree, TreeNode};
use crate::error::{AuditError, Result};
use crate::features::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_samples_leaf: f64,
}

impl Default for CartParams {
    fn default() -> Self {
        Self { max_depth: 5, min_samples_leaf: 5.0 }
    }
}

/// Single regression tree grown greedily on variance reduction.
pub fn fit_cart(inputs: &Matrix, target: &[f64], params: &CartParams) -> Result<Tree> {
    fit_cart_weighted(inputs, target, &vec![1.0; inputs.nrows()], params)
}

pub fn fit_cart_weighted(inputs: &Matrix, target: &[f64], sample_weights: &[f64], params: &CartParams) -> Result<Tree> {
    let n = inputs.nrows();
    if target.len() != n || sample_weights.len() != n {
        return Err(AuditError::Dimension { expected: n, got: target.len().min(sample_weights.len()) });
    }
    let total: f64 = sample_weights.iter().sum();
    if total < 2.0 {
        return Err(AuditError::InsufficientData(format!("need at least 2 rows, got {total}")));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(AuditError::Domain("target contains non-finite values".into()));
    }
    let mean = target.iter().zip(sample_weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let spread: f64 = target.iter().zip(sample_weights).map(|(v, w)| w * (v - mean).powi(2)).sum();
    let builder = Builder { inputs, target, weights: sample_weights, params, floor: 1e-12 * (1.0 + spread) };
    let rows: Vec<usize> = (0..n).filter(|&i| sample_weights[i] > 0.0).collect();
    let mut nodes = Vec::new();
    builder.build(rows, 0, &mut nodes);
    Ok(Tree { nodes })
}

struct Builder<'a> {
    inputs: &'a Matrix,
    target: &'a [f64],
    weights: &'a [f64],
    params: &'a CartParams,
    floor: f64,
}

impl Builder<'_> {
    fn build(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
        let (s, w) = rows.iter().fold((0.0, 0.0), |(s, w), &i| (s + self.target[i] * self.weights[i], w + self.weights[i]));
        let at = nodes.len();
        nodes.push(TreeNode::leaf(s / w, w, depth));
        if depth >= self.params.max_depth {
            return at;
        }
        let Some((feature, threshold, gain)) = self.best_split(&rows, s, w) else {
            return at;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.inputs.get(i, feature) <= threshold);
        let l = self.build(left, depth + 1, nodes);
        let r = self.build(right, depth + 1, nodes);
        let node = &mut nodes[at];
        node.feature = Some(feature);
        node.threshold = threshold;
        node.left = Some(l);
        node.right = Some(r);
        node.gain = gain;
        at
    }

    fn best_split(&self, rows: &[usize], sum: f64, weight: f64) -> Option<(usize, f64, f64)> {
        let parent = sum * sum / weight;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.inputs.ncols() {
            order.sort_by(|&a, &b| self.inputs.get(a, f).total_cmp(&self.inputs.get(b, f)));
            let (mut sl, mut wl) = (0.0, 0.0);
            for pair in order.windows(2) {
                let (i, j) = (pair[0], pair[1]);
                sl += self.target[i] * self.weights[i];
                wl += self.weights[i];
                let (xi, xj) = (self.inputs.get(i, f), self.inputs.get(j, f));
                if xj <= xi {
                    continue;
                }
                let wr = weight - wl;
                if wl < self.params.min_samples_leaf || wr < self.params.min_samples_leaf {
                    continue;
                }
                let sr = sum - sl;
                let gain = sl * sl / wl + sr * sr / wr - parent;
                if gain > self.floor && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, 0.5 * (xi + xj), gain));
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_inputs(vals: &[f64]) -> Matrix {
        Matrix::new(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = column_inputs(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let t = fit_cart(&x, &[2.0; 5], &CartParams { max_depth: 4, min_samples_leaf: 1.0 }).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root().value, 2.0);
    }

    #[test]
    fn step_target_gets_exact_threshold() {
        let xs: Vec<f64> = (0..20).map(|i| (i % 5 + 1) as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 3.0 { 10.0 } else { -1.0 }).collect();
        let x = column_inputs(&xs);
        let t = fit_cart(&x, &y, &CartParams { max_depth: 3, min_samples_leaf: 1.0 }).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.root().threshold, 3.5);
        for (r, &v) in y.iter().enumerate() {
            assert_eq!(t.predict(x.row(r)), v);
        }
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let x = column_inputs(&[1.0, 2.0, 3.0, 4.0]);
        let t = fit_cart(&x, &[1.0, 2.0, 3.0, 6.0], &CartParams { max_depth: 0, min_samples_leaf: 1.0 }).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root().value, 3.0);
    }
}
