//! Conjunctive threshold rules read off tree paths, their canonical form on
//! the ordinal grid, and the binary instance-by-rule design matrix.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::features::{Matrix, GRID_MIN};
use crate::tree::{Tree, TreeEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl Op {
    pub fn flip(self) -> Op {
        match self {
            Op::Le => Op::Gt,
            Op::Gt => Op::Le,
        }
    }

    pub fn holds(self, x: f64, threshold: f64) -> bool {
        match self {
            Op::Le => x <= threshold,
            Op::Gt => x > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Le => "<=",
            Op::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: String,
    pub op: Op,
    pub threshold: f64,
}

impl Predicate {
    pub fn new(feature: impl Into<String>, op: Op, threshold: f64) -> Self {
        Self { feature: feature.into(), op, threshold }
    }

    pub fn le(feature: impl Into<String>, threshold: f64) -> Self {
        Self::new(feature, Op::Le, threshold)
    }

    pub fn gt(feature: impl Into<String>, threshold: f64) -> Self {
        Self::new(feature, Op::Gt, threshold)
    }

    pub fn complement(&self) -> Predicate {
        Predicate { feature: self.feature.clone(), op: self.op.flip(), threshold: self.threshold }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.feature
            .cmp(&other.feature)
            .then(self.op.cmp(&other.op))
            .then(self.threshold.total_cmp(&other.threshold))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.feature, self.op.symbol(), self.threshold)
    }
}

/// Snaps a split threshold onto the integer grid: a non-integer `t` strictly
/// inside `(GRID_MIN, grid_max)` becomes `floor(t)`, which leaves both `x <= t`
/// and `x > t` unchanged on integer inputs.
pub fn canonical_threshold(t: f64, grid_max: i64) -> f64 {
    if t.fract() != 0.0 && t > GRID_MIN as f64 && t < grid_max as f64 {
        t.floor()
    } else {
        t
    }
}

/// Keeps the tightest bound per (feature, op) and sorts by feature then op.
pub fn merge_conditions(conditions: Vec<Predicate>) -> Vec<Predicate> {
    let mut out: Vec<Predicate> = Vec::with_capacity(conditions.len());
    for p in conditions {
        match out.iter_mut().find(|q| q.feature == p.feature && q.op == p.op) {
            Some(q) => {
                q.threshold = match p.op {
                    Op::Le => q.threshold.min(p.threshold),
                    Op::Gt => q.threshold.max(p.threshold),
                }
            }
            None => out.push(p),
        }
    }
    out.sort_by(|a, b| a.cmp_key(b));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub target: String,
    pub conditions: Vec<Predicate>,
    #[serde(default)]
    pub coefficient: f64,
    #[serde(default)]
    pub support: f64,
    #[serde(default)]
    pub importance: f64,
}

impl Rule {
    /// Builds a rule with merged, sorted conditions. Empty rules are rejected.
    pub fn new(target: impl Into<String>, conditions: Vec<Predicate>) -> Result<Self> {
        if conditions.is_empty() {
            return Err(AuditError::Domain("a rule needs at least one condition".into()));
        }
        if conditions.iter().any(|p| !p.threshold.is_finite()) {
            return Err(AuditError::Domain("rule thresholds must be finite".into()));
        }
        Ok(Self {
            target: target.into(),
            conditions: merge_conditions(conditions),
            coefficient: 0.0,
            support: 0.0,
            importance: 0.0,
        })
    }

    pub fn canonicalized(&self, grid_max: i64) -> Rule {
        let conditions = self
            .conditions
            .iter()
            .map(|p| Predicate { threshold: canonical_threshold(p.threshold, grid_max), ..p.clone() })
            .collect();
        Rule { conditions: merge_conditions(conditions), ..self.clone() }
    }

    /// True when every threshold sits on the integer grid.
    pub fn is_canonical(&self) -> bool {
        self.conditions.iter().all(|p| p.threshold.fract() == 0.0)
    }

    pub fn features(&self) -> Vec<&str> {
        let mut f: Vec<&str> = self.conditions.iter().map(|p| p.feature.as_str()).collect();
        f.dedup();
        f
    }

    /// Evaluates all predicates against a row, resolving names through `feature_names`.
    pub fn matches(&self, row: &[f64], feature_names: &[String]) -> Result<bool> {
        for p in &self.conditions {
            let i = feature_position(feature_names, &p.feature)?;
            if !p.op.holds(row[i], p.threshold) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Ordering used to break importance ties: fewer predicates first, then
    /// lexicographic order of the conditions.
    pub fn tie_order(&self, other: &Rule) -> Ordering {
        self.conditions.len().cmp(&other.conditions.len()).then_with(|| {
            for (a, b) in self.conditions.iter().zip(&other.conditions) {
                let o = a.cmp_key(b);
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
    }

    pub fn same_conditions(&self, other: &[Predicate]) -> bool {
        self.conditions.len() == other.len()
            && self.conditions.iter().zip(other).all(|(a, b)| a.cmp_key(b) == Ordering::Equal)
    }

    fn key(&self) -> Vec<(String, Op, u64)> {
        self.conditions.iter().map(|p| (p.feature.clone(), p.op, p.threshold.to_bits())).collect()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conds: Vec<String> = self.conditions.iter().map(|p| p.to_string()).collect();
        write!(f, "[{}] -> {}", conds.join(" AND "), self.target)
    }
}

pub(crate) fn feature_position(names: &[String], feature: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| AuditError::Schema(format!("rule references unknown feature `{feature}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub target: String,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub enum RuleSource<'a> {
    Ensemble(&'a TreeEnsemble),
    Tree(&'a Tree),
}

/// Rules from every non-root node of every tree, each formed by the path from
/// the root. Rules are canonicalized onto the grid and deduplicated, keeping
/// the first occurrence.
pub fn extract_rules(source: RuleSource<'_>, feature_names: &[String], target: &str, grid_max: i64) -> RuleSet {
    let trees: Vec<&Tree> = match source {
        RuleSource::Ensemble(e) => e.trees.iter().collect(),
        RuleSource::Tree(t) => vec![t],
    };
    let rules = extract_with_values(&trees, feature_names, target, grid_max).into_iter().map(|(r, _)| r).collect();
    RuleSet { target: target.to_string(), rules }
}

/// Like [`extract_rules`] but also returns the node value each rule ends at.
pub fn extract_with_values(
    trees: &[&Tree],
    feature_names: &[String],
    target: &str,
    grid_max: i64,
) -> Vec<(Rule, f64)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for tree in trees {
        let mut stack: Vec<(usize, Vec<Predicate>)> = vec![(0, Vec::new())];
        while let Some((k, path)) = stack.pop() {
            let node = &tree.nodes[k];
            if !path.is_empty() {
                let rule = Rule::new(target, path.clone()).expect("non-empty path").canonicalized(grid_max);
                if seen.insert(rule.key()) {
                    out.push((rule, node.value));
                }
            }
            if let (Some(f), Some(l), Some(r)) = (node.feature, node.left, node.right) {
                let name = &feature_names[f];
                let mut rp = path.clone();
                rp.push(Predicate::gt(name.clone(), node.threshold));
                let mut lp = path;
                lp.push(Predicate::le(name.clone(), node.threshold));
                // left subtree is visited first
                stack.push((r, rp));
                stack.push((l, lp));
            }
        }
    }
    out
}

/// Binary instance-by-rule activation matrix, stored column-wise as the sorted
/// indices of active rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    columns: Vec<Vec<u32>>,
}

impl DesignMatrix {
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<u32>>) -> Result<Self> {
        for c in &columns {
            if c.windows(2).any(|w| w[0] >= w[1]) || c.last().is_some_and(|&l| l as usize >= n_rows) {
                return Err(AuditError::Domain("design column indices must be sorted and in range".into()));
            }
        }
        Ok(Self { n_rows, columns })
    }

    /// Dense 0/1 matrix, rows = instances.
    pub fn from_dense(m: &Matrix) -> Result<Self> {
        let mut columns = vec![Vec::new(); m.ncols()];
        for r in 0..m.nrows() {
            for (c, col) in columns.iter_mut().enumerate() {
                match m.get(r, c) {
                    v if v == 1.0 => col.push(r as u32),
                    v if v == 0.0 => {}
                    v => return Err(AuditError::Domain(format!("design entries must be 0 or 1, got {v}"))),
                }
            }
        }
        Ok(Self { n_rows: m.nrows(), columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[u32] {
        &self.columns[j]
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.columns[col].binary_search(&(row as u32)).is_ok()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols());
        for (j, col) in self.columns.iter().enumerate() {
            for &r in col {
                m.set(r as usize, j, 1.0);
            }
        }
        m
    }

    /// Weighted fraction of rows activating each column.
    pub fn supports(&self, sample_weights: &[f64]) -> Vec<f64> {
        let total: f64 = sample_weights.iter().sum();
        self.columns
            .iter()
            .map(|c| c.iter().map(|&r| sample_weights[r as usize]).sum::<f64>() / total)
            .collect()
    }
}

pub fn build_design_matrix(rules: &[Rule], inputs: &Matrix, feature_names: &[String]) -> Result<DesignMatrix> {
    if rules.is_empty() {
        return Err(AuditError::EmptyInput("no rules to build a design matrix from".into()));
    }
    if feature_names.len() != inputs.ncols() {
        return Err(AuditError::Dimension { expected: inputs.ncols(), got: feature_names.len() });
    }
    let mut columns = Vec::with_capacity(rules.len());
    for rule in rules {
        let preds: Vec<(usize, Op, f64)> = rule
            .conditions
            .iter()
            .map(|p| Ok((feature_position(feature_names, &p.feature)?, p.op, p.threshold)))
            .collect::<Result<_>>()?;
        let col = (0..inputs.nrows())
            .filter(|&r| {
                let row = inputs.row(r);
                preds.iter().all(|&(i, op, t)| op.holds(row[i], t))
            })
            .map(|r| r as u32)
            .collect();
        columns.push(col);
    }
    Ok(DesignMatrix { n_rows: inputs.nrows(), columns })
}

/// Builds a rule that must come from integer grid values, for tests and fixtures.
pub fn grid_rule(target: &str, conditions: &[(&str, Op, i64)]) -> Rule {
    Rule::new(target, conditions.iter().map(|&(f, op, t)| Predicate::new(f, op, t as f64)).collect())
        .expect("grid rule needs conditions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeNode;
    use crate::features::GRID_MAX;

    fn names() -> Vec<String> {
        crate::features::input_names()
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize, depth: usize) -> TreeNode {
        TreeNode {
            feature: Some(feature),
            threshold,
            left: Some(left),
            right: Some(right),
            value: 0.0,
            gain: 1.0,
            cover: 1.0,
            depth,
        }
    }

    fn depth_two_tree() -> Tree {
        // common <= 2.5 ; right: positive <= 3.5
        Tree {
            nodes: vec![
                split(2, 2.5, 1, 2, 0),
                TreeNode::leaf(-1.0, 1.0, 1),
                split(5, 3.5, 3, 4, 1),
                TreeNode::leaf(0.0, 1.0, 2),
                TreeNode::leaf(2.0, 1.0, 2),
            ],
        }
    }

    #[test]
    fn paths_enumerated_in_order() {
        let rs = extract_rules(RuleSource::Tree(&depth_two_tree()), &names(), "length_chars", GRID_MAX);
        let expected = vec![
            grid_rule("length_chars", &[("common", Op::Le, 2)]),
            grid_rule("length_chars", &[("common", Op::Gt, 2)]),
            grid_rule("length_chars", &[("common", Op::Gt, 2), ("positive", Op::Le, 3)]),
            grid_rule("length_chars", &[("common", Op::Gt, 2), ("positive", Op::Gt, 3)]),
        ];
        assert_eq!(rs.rules, expected);
    }

    #[test]
    fn threshold_floors_on_grid() {
        let r = Rule::new("t", vec![Predicate::le("common", 4.5)]).unwrap().canonicalized(GRID_MAX);
        assert_eq!(r.conditions, vec![Predicate::le("common", 4.0)]);
        assert_eq!(canonical_threshold(5.5, GRID_MAX), 5.5);
        assert_eq!(canonical_threshold(0.5, GRID_MAX), 0.5);
        assert_eq!(canonical_threshold(3.0, GRID_MAX), 3.0);
    }

    #[test]
    fn identical_paths_across_trees_dedup() {
        let t = depth_two_tree();
        let e = TreeEnsemble { trees: vec![t.clone(), t], learning_rate: 0.1, base_score: 0.0 };
        let rs = extract_rules(RuleSource::Ensemble(&e), &names(), "x", GRID_MAX);
        assert_eq!(rs.len(), 4);
    }

    #[test]
    fn merging_keeps_tightest_bounds() {
        let r = Rule::new("t", vec![Predicate::le("a", 4.0), Predicate::gt("a", 1.0), Predicate::le("a", 2.0), Predicate::gt("a", 0.0)])
            .unwrap();
        assert_eq!(r.conditions, vec![Predicate::le("a", 2.0), Predicate::gt("a", 1.0)]);
    }

    #[test]
    fn empty_rule_rejected() {
        assert!(Rule::new("t", vec![]).is_err());
    }

    #[test]
    fn design_column_from_predicate() {
        let mut inputs = Matrix::zeros(2, 11);
        inputs.set(0, 2, 1.0);
        inputs.set(1, 2, 3.0);
        let rule = grid_rule("t", &[("common", Op::Le, 2)]);
        let dm = build_design_matrix(&[rule], &inputs, &names()).unwrap();
        assert!(dm.get(0, 0));
        assert!(!dm.get(1, 0));
    }

    #[test]
    fn unknown_feature_is_schema_error() {
        let rule = grid_rule("t", &[("popularity", Op::Le, 2)]);
        let err = build_design_matrix(&[rule], &Matrix::zeros(1, 11), &names()).unwrap_err();
        assert!(matches!(err, AuditError::Schema(_)));
    }

    #[test]
    fn tie_order_prefers_fewer_predicates() {
        let a = grid_rule("t", &[("common", Op::Le, 2)]);
        let b = grid_rule("t", &[("common", Op::Le, 2), ("positive", Op::Gt, 1)]);
        let c = grid_rule("t", &[("common", Op::Le, 3)]);
        assert_eq!(a.tie_order(&b), Ordering::Less);
        assert_eq!(a.tie_order(&c), Ordering::Less);
    }
}
