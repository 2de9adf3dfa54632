use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tree, TreeEnsemble, TreeNode};
use crate::error::{AuditError, Result};
use crate::features::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_child_weight: f64,
    /// Fraction of features drawn (weighted, without replacement) at every depth level.
    pub colsample_bylevel: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_child_weight: 1.0,
            colsample_bylevel: 1.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(AuditError::Domain("n_trees and max_depth must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(AuditError::Domain("learning_rate must be positive, l2_lambda and min_child_weight non-negative".into()));
        }
        if !(self.colsample_bylevel > 0.0 && self.colsample_bylevel <= 1.0) {
            return Err(AuditError::Domain(format!("colsample_bylevel {} outside (0, 1]", self.colsample_bylevel)));
        }
        Ok(())
    }
}

/// Gradient-boosted regression trees on squared error.
///
/// `feature_weights` (any positive scale) biases the per-level feature
/// sampling; `None` samples uniformly.
pub fn fit_gbrt(
    inputs: &Matrix,
    target: &[f64],
    params: &BoostParams,
    feature_weights: Option<&[f64]>,
) -> Result<TreeEnsemble> {
    fit_gbrt_weighted(inputs, target, &vec![1.0; inputs.nrows()], params, feature_weights)
}

/// As [`fit_gbrt`], with a non-negative weight per row. A row with weight `c`
/// behaves exactly like `c` copies of that row.
pub fn fit_gbrt_weighted(
    inputs: &Matrix,
    target: &[f64],
    sample_weights: &[f64],
    params: &BoostParams,
    feature_weights: Option<&[f64]>,
) -> Result<TreeEnsemble> {
    params.validate()?;
    let n = inputs.nrows();
    let n_features = inputs.ncols();
    if target.len() != n || sample_weights.len() != n {
        return Err(AuditError::Dimension { expected: n, got: target.len().min(sample_weights.len()) });
    }
    let total_weight: f64 = sample_weights.iter().sum();
    if total_weight < 2.0 {
        return Err(AuditError::InsufficientData(format!("need at least 2 rows, got {total_weight}")));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(AuditError::Domain("target contains non-finite values".into()));
    }
    let sampling = match feature_weights {
        Some(w) if w.len() != n_features => {
            return Err(AuditError::Dimension { expected: n_features, got: w.len() })
        }
        Some(w) if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
            return Err(AuditError::Domain("feature weights must be positive".into()))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; n_features],
    };

    let base_score = target.iter().zip(sample_weights).map(|(v, w)| v * w).sum::<f64>() / total_weight;
    let spread: f64 = target.iter().zip(sample_weights).map(|(v, w)| w * (v - base_score).powi(2)).sum();
    let gain_floor = 1e-12 * (1.0 + spread);
    let n_sampled = ((params.colsample_bylevel * n_features as f64).ceil() as usize).clamp(1, n_features);

    let active: Vec<usize> = (0..n).filter(|&i| sample_weights[i] > 0.0).collect();
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx = active.clone();
            idx.sort_by(|&a, &b| inputs.get(a, f).total_cmp(&inputs.get(b, f)));
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let grower = Grower { inputs, sorted: &sorted, params, gain_floor };

    for _ in 0..params.n_trees {
        for i in 0..n {
            grad[i] = sample_weights[i] * (pred[i] - target[i]);
        }
        let (tree, node_of) = grower.grow(&active, &grad, sample_weights, &sampling, n_sampled, &mut rng);
        for &i in &active {
            pred[i] += params.learning_rate * tree.nodes[node_of[i]].value;
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble { trees, learning_rate: params.learning_rate, base_score })
}

struct Grower<'a> {
    inputs: &'a Matrix,
    sorted: &'a [Vec<usize>],
    params: &'a BoostParams,
    gain_floor: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_grad: f64,
    left_hess: f64,
}

impl Grower<'_> {
    fn weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.l2_lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2_lambda)
    }

    /// Grows one tree level by level. Returns the tree and the final node of every row.
    fn grow(
        &self,
        active: &[usize],
        grad: &[f64],
        hess: &[f64],
        sampling: &[f64],
        n_sampled: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Tree, Vec<usize>) {
        let n = grad.len();
        let mut node_of = vec![0usize; n];
        let (g0, h0) = active.iter().fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]));
        let mut nodes = vec![TreeNode::leaf(self.weight(g0, h0), h0, 0)];
        let mut sums = vec![(g0, h0)];
        let mut level: Vec<usize> = vec![0];

        for depth in 0..self.params.max_depth {
            if level.is_empty() {
                break;
            }
            let features = sample_features(sampling, n_sampled, rng);
            let mut slot = vec![usize::MAX; nodes.len()];
            for (s, &k) in level.iter().enumerate() {
                slot[k] = s;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; level.len()];
            let mut gl = vec![0.0; level.len()];
            let mut hl = vec![0.0; level.len()];
            let mut last = vec![f64::NAN; level.len()];

            for &f in &features {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &i in &self.sorted[f] {
                    let s = slot[node_of[i]];
                    if s == usize::MAX {
                        continue;
                    }
                    let x = self.inputs.get(i, f);
                    if x > last[s] {
                        let (g, h) = sums[level[s]];
                        let (gr, hr) = (g - gl[s], h - hl[s]);
                        if hl[s] >= self.params.min_child_weight && hr >= self.params.min_child_weight {
                            let gain = 0.5 * (self.score(gl[s], hl[s]) + self.score(gr, hr) - self.score(g, h));
                            if gain > self.gain_floor && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: 0.5 * (last[s] + x),
                                    left_grad: gl[s],
                                    left_hess: hl[s],
                                });
                            }
                        }
                    }
                    gl[s] += grad[i];
                    hl[s] += hess[i];
                    last[s] = x;
                }
            }

            let mut next = Vec::new();
            let mut children = vec![(usize::MAX, usize::MAX); level.len()];
            for (s, &k) in level.iter().enumerate() {
                let Some(c) = best[s] else { continue };
                let (g, h) = sums[k];
                let (gr, hr) = (g - c.left_grad, h - c.left_hess);
                let l = nodes.len();
                nodes.push(TreeNode::leaf(self.weight(c.left_grad, c.left_hess), c.left_hess, depth + 1));
                nodes.push(TreeNode::leaf(self.weight(gr, hr), hr, depth + 1));
                sums.push((c.left_grad, c.left_hess));
                sums.push((gr, hr));
                let node = &mut nodes[k];
                node.feature = Some(c.feature);
                node.threshold = c.threshold;
                node.left = Some(l);
                node.right = Some(l + 1);
                node.gain = c.gain;
                children[s] = (l, l + 1);
                next.push(l);
                next.push(l + 1);
            }
            for &i in active {
                let s = slot[node_of[i]];
                if s == usize::MAX || children[s].0 == usize::MAX {
                    continue;
                }
                let k = node_of[i];
                let (f, t) = (nodes[k].feature.unwrap(), nodes[k].threshold);
                node_of[i] = if self.inputs.get(i, f) <= t { children[s].0 } else { children[s].1 };
            }
            level = next;
        }
        (Tree { nodes }, node_of)
    }
}

/// Draws `k` distinct features with probability proportional to `weights`.
/// Returned indices are sorted so split search visits features in order.
fn sample_features(weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= weights.len() {
        return (0..weights.len()).collect();
    }
    let mut pool: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = pool.iter().map(|&f| weights[f]).sum();
        let mut r = rng.random::<f64>() * total;
        let mut at = pool.len() - 1;
        for (p, &f) in pool.iter().enumerate() {
            if r < weights[f] {
                at = p;
                break;
            }
            r -= weights[f];
        }
        picked.push(pool.remove(at));
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_inputs(n_features: usize, rows: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * n_features).map(|_| rng.random_range(1..=5) as f64).collect();
        Matrix::new(rows, n_features, data).unwrap()
    }

    fn mse(e: &TreeEnsemble, x: &Matrix, y: &[f64], n: usize) -> f64 {
        (0..x.nrows()).map(|r| (e.predict_with(x.row(r), n) - y[r]).powi(2)).sum::<f64>() / x.nrows() as f64
    }

    #[test]
    fn constant_target_has_no_splits() {
        let x = grid_inputs(11, 40, 1);
        let y = vec![3.0; 40];
        let e = fit_gbrt(&x, &y, &BoostParams { n_trees: 5, ..Default::default() }, None).unwrap();
        assert!(e.trees.iter().all(|t| t.nodes.len() == 1));
        for r in 0..x.nrows() {
            assert_eq!(e.predict(x.row(r)), 3.0);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = grid_inputs(11, 1, 1);
        assert!(matches!(fit_gbrt(&x, &[1.0], &BoostParams::default(), None), Err(AuditError::InsufficientData(_))));
    }

    #[test]
    fn step_target_splits_once_on_common() {
        let x = grid_inputs(11, 200, 2);
        let y: Vec<f64> = (0..200).map(|r| if x.get(r, 2) > 2.0 { 1.0 } else { 0.0 }).collect();
        let params = BoostParams { n_trees: 1, max_depth: 1, learning_rate: 1.0, l2_lambda: 0.0, ..Default::default() };
        let e = fit_gbrt(&x, &y, &params, None).unwrap();
        let root = e.trees[0].root();
        assert_eq!(root.feature, Some(2));
        assert!(root.threshold > 2.0 && root.threshold < 3.0);
        for r in 0..200 {
            assert!((e.predict(x.row(r)) - y[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrated_weights_force_split_feature() {
        let x = grid_inputs(11, 300, 3);
        let y: Vec<f64> = (0..300).map(|r| x.get(r, 0) * 2.0 + x.get(r, 5) + x.get(r, 9) * x.get(r, 2)).collect();
        let mut w = vec![1e-7 / 10.0; 11];
        w[5] = 1.0 - 1e-7;
        let params = BoostParams { n_trees: 30, colsample_bylevel: 1.0 / 11.0, seed: 11, ..Default::default() };
        let e = fit_gbrt(&x, &y, &params, Some(&w)).unwrap();
        let internal: Vec<_> = e.trees.iter().flat_map(|t| t.nodes.iter()).filter(|n| !n.is_leaf()).collect();
        assert!(!internal.is_empty());
        assert!(internal.iter().all(|n| n.feature == Some(5)));
    }

    #[test]
    fn training_loss_never_increases() {
        let x = grid_inputs(4, 120, 4);
        let y: Vec<f64> = (0..120).map(|r| (x.get(r, 0) - 3.0).powi(2) + x.get(r, 1) * x.get(r, 3)).collect();
        let e = fit_gbrt(&x, &y, &BoostParams { n_trees: 40, colsample_bylevel: 0.5, ..Default::default() }, None).unwrap();
        let mut prev = mse(&e, &x, &y, 0);
        for k in 1..=40 {
            let cur = mse(&e, &x, &y, k);
            assert!(cur <= prev + 1e-9, "loss rose at tree {k}: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn weighted_rows_match_duplicated_rows() {
        let x = grid_inputs(3, 30, 5);
        let y: Vec<f64> = (0..30).map(|r| x.get(r, 0) + 0.5 * x.get(r, 2)).collect();
        let w: Vec<f64> = (0..30).map(|r| (r % 3 + 1) as f64).collect();
        let mut dup_rows = Vec::new();
        let mut dup_y = Vec::new();
        for r in 0..30 {
            for _ in 0..w[r] as usize {
                dup_rows.push(x.row(r).to_vec());
                dup_y.push(y[r]);
            }
        }
        let xd = Matrix::from_rows(&dup_rows).unwrap();
        let params = BoostParams { n_trees: 10, colsample_bylevel: 0.5, seed: 9, ..Default::default() };
        let a = fit_gbrt_weighted(&x, &y, &w, &params, None).unwrap();
        let b = fit_gbrt(&xd, &dup_y, &params, None).unwrap();
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.nodes.len(), tb.nodes.len());
            for (na, nb) in ta.nodes.iter().zip(&tb.nodes) {
                assert_eq!(na.feature, nb.feature);
                assert!((na.value - nb.value).abs() < 1e-9);
            }
        }
    }
}
