//! The rule-extraction methods (the SHAP-weighted pipeline, its ablations,
//! and the baselines) producing ranked rule sets per output feature.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{background_of, AbstractionMatrix, UniqueRows};
use crate::error::{AuditError, Result};
use crate::eval::{certificate_table, evaluate_method, EvaluationReport};
use crate::features::{input_names, output_index, GRID_MAX, N_INPUTS, OUTPUT_NAMES};
use crate::lasso::{lasso_cv, rule_feature_weight, rule_importance, weighted_lasso_rows, AlphaSelection, ImportanceMode, LassoParams};
use crate::rules::{build_design_matrix, extract_rules, extract_with_values, Rule, RuleSource};
use crate::shap::{explain_rows, global_attributions, FeatureWeights, NearestDatapointModel, PerturbationModel, DEFAULT_PERMUTATIONS};
use crate::sim::GroundTruthRule;
use crate::tree::{fit_cart_weighted, fit_gbrt_weighted, BoostParams, CartParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ruleshap,
    RuleshapNoStep2,
    RuleshapNoStep3,
    Rulefit,
    RulefitXgb,
    DecisionTree,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ruleshap,
        Method::RuleshapNoStep2,
        Method::RuleshapNoStep3,
        Method::Rulefit,
        Method::RulefitXgb,
        Method::DecisionTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ruleshap => "ruleshap",
            Method::RuleshapNoStep2 => "ruleshap_no_step2",
            Method::RuleshapNoStep3 => "ruleshap_no_step3",
            Method::Rulefit => "rulefit",
            Method::RulefitXgb => "rulefit_xgb",
            Method::DecisionTree => "decision_tree",
        }
    }

    /// Whether the method consumes SHAP feature weights at any stage.
    pub fn uses_shap(self) -> bool {
        matches!(self, Method::Ruleshap | Method::RuleshapNoStep2 | Method::RuleshapNoStep3)
    }

    fn weighted_trees(self) -> bool {
        matches!(self, Method::Ruleshap | Method::RuleshapNoStep3)
    }

    fn weighted_lasso(self) -> bool {
        matches!(self, Method::Ruleshap | Method::RuleshapNoStep2)
    }

    fn importance_mode(self) -> ImportanceMode {
        match self {
            Method::Rulefit | Method::RulefitXgb => ImportanceMode::Rulefit,
            _ => ImportanceMode::Ruleshap,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            AuditError::Config(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapParams {
    pub n_permutations: usize,
}

impl Default for ShapParams {
    fn default() -> Self {
        Self { n_permutations: DEFAULT_PERMUTATIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub method: Method,
    /// Tree count, depth, learning rate and seed; the feature-sampling rate
    /// is set per method.
    pub boosting: BoostParams,
    pub cart: CartParams,
    pub shap: ShapParams,
    pub lasso: LassoParams,
    pub alpha: AlphaSelection,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::Ruleshap,
            boosting: BoostParams::default(),
            cart: CartParams::default(),
            shap: ShapParams::default(),
            lasso: LassoParams::default(),
            alpha: AlphaSelection::default(),
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn for_method(method: Method, seed: u64) -> Self {
        Self { method, seed, ..Default::default() }
    }

    fn boost_params(&self) -> BoostParams {
        let mut p = self.boosting.clone();
        p.seed = self.seed;
        match self.method {
            Method::Rulefit => {
                p.colsample_bylevel = 1.0;
                p.l2_lambda = 0.0;
            }
            _ => p.colsample_bylevel = 1.0 / N_INPUTS as f64,
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRule {
    pub rank: usize,
    #[serde(flatten)]
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRuleSet {
    pub target: String,
    pub method: String,
    /// Rules produced by the tree stage before sparsification.
    pub n_candidates: usize,
    pub rules: Vec<RankedRule>,
}

impl RankedRuleSet {
    fn from_rules(target: &str, method: Method, n_candidates: usize, mut rules: Vec<Rule>) -> Self {
        rules.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.tie_order(b)));
        let rules = rules.into_iter().enumerate().map(|(i, rule)| RankedRule { rank: i + 1, rule }).collect();
        Self { target: target.to_string(), method: method.name().to_string(), n_candidates, rules }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Global SHAP weights for every output column of `data`, from a single
/// pass of the nearest-datapoint explainer over all rows.
pub fn compute_feature_weights(data: &AbstractionMatrix, shap: &ShapParams, seed: u64) -> Result<Vec<FeatureWeights>> {
    let mut model = NearestDatapointModel::new(data, (0..OUTPUT_NAMES.len()).collect())?;
    compute_feature_weights_with(&mut model, data, shap, seed)
}

/// Same as [`compute_feature_weights`] with any perturbation model, e.g. a
/// direct function for simulated data. Returns one entry per model output.
pub fn compute_feature_weights_with<M: PerturbationModel + ?Sized>(
    model: &mut M,
    data: &AbstractionMatrix,
    shap: &ShapParams,
    seed: u64,
) -> Result<Vec<FeatureWeights>> {
    let background = background_of(data)?;
    let attributions = explain_rows(model, data.inputs(), &background.values, &input_names(), shap.n_permutations, seed)?;
    attributions.iter().map(global_attributions).collect()
}

/// Runs one method on one target, computing SHAP weights only if needed.
pub fn run_method(data: &AbstractionMatrix, target: &str, cfg: &MethodConfig) -> Result<RankedRuleSet> {
    let t = output_index(target)?;
    let weights = if cfg.method.uses_shap() {
        let mut model = NearestDatapointModel::new(data, vec![t])?;
        compute_feature_weights_with(&mut model, data, &cfg.shap, cfg.seed)?.remove(0)
    } else {
        FeatureWeights::uniform(N_INPUTS)
    };
    run_method_with_weights(data, target, cfg, &weights)
}

/// Runs one method with precomputed feature weights (ignored by methods
/// that do not use them).
pub fn run_method_with_weights(
    data: &AbstractionMatrix,
    target: &str,
    cfg: &MethodConfig,
    weights: &FeatureWeights,
) -> Result<RankedRuleSet> {
    let t = output_index(target)?;
    if weights.len() != N_INPUTS {
        return Err(AuditError::Dimension { expected: N_INPUTS, got: weights.len() });
    }
    let names = input_names();
    let uniq = UniqueRows::new(data.inputs());
    let counts = uniq.counts();
    let y = uniq.group_means(&data.output_column(t));
    let mean = y.iter().zip(&counts).map(|(v, c)| v * c).sum::<f64>() / counts.iter().sum::<f64>();
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + mean.abs()) || uniq.len() < 2 {
        return Ok(RankedRuleSet::from_rules(target, cfg.method, 0, Vec::new()));
    }

    if cfg.method == Method::DecisionTree {
        let tree = fit_cart_weighted(&uniq.inputs, &y, &counts, &cfg.cart)?;
        let extracted = extract_with_values(&[&tree], &names, target, GRID_MAX);
        if extracted.is_empty() {
            return Ok(RankedRuleSet::from_rules(target, cfg.method, 0, Vec::new()));
        }
        let rules: Vec<Rule> = extracted.iter().map(|(r, _)| r.clone()).collect();
        let design = build_design_matrix(&rules, &uniq.inputs, &names)?;
        let supports = design.supports(&counts);
        let n = rules.len();
        let rules = extracted
            .into_iter()
            .zip(supports)
            .map(|((mut r, value), s)| {
                r.coefficient = value - mean;
                r.importance = (value - mean).abs();
                r.support = s;
                r
            })
            .collect();
        return Ok(RankedRuleSet::from_rules(target, cfg.method, n, rules));
    }

    let uniform = FeatureWeights::uniform(N_INPUTS);
    let tree_weights = if cfg.method.weighted_trees() { weights } else { &uniform };
    let ensemble = fit_gbrt_weighted(&uniq.inputs, &y, &counts, &cfg.boost_params(), Some(&tree_weights.normalized))?;
    let candidates = extract_rules(RuleSource::Ensemble(&ensemble), &names, target, GRID_MAX).rules;
    if candidates.is_empty() {
        return Ok(RankedRuleSet::from_rules(target, cfg.method, 0, Vec::new()));
    }
    let design = build_design_matrix(&candidates, &uniq.inputs, &names)?;
    let rule_weights = if cfg.method.weighted_lasso() {
        candidates.iter().map(|r| rule_feature_weight(r, weights, &names)).collect::<Result<Vec<_>>>()?
    } else {
        vec![1.0; candidates.len()]
    };
    let fit = match cfg.alpha {
        AlphaSelection::Fixed(alpha) => weighted_lasso_rows(&design, &y, &counts, alpha, &rule_weights, &cfg.lasso)?,
        AlphaSelection::CrossValidated { folds, n_alphas, min_ratio } => {
            lasso_cv(&design, &y, &counts, &rule_weights, folds, n_alphas, min_ratio, &cfg.lasso, cfg.seed)?.0
        }
    };
    let supports = design.supports(&counts);
    let importance = rule_importance(&fit.coefficients, &supports, cfg.method.importance_mode())?;
    let n_candidates = candidates.len();
    let rules = candidates
        .into_iter()
        .enumerate()
        .filter(|(j, _)| fit.coefficients[*j] != 0.0)
        .map(|(j, mut r)| {
            r.coefficient = fit.coefficients[j];
            r.support = supports[j];
            r.importance = importance[j];
            r
        })
        .collect();
    Ok(RankedRuleSet::from_rules(target, cfg.method, n_candidates, rules))
}

/// Rule sets of every (method, target) pair; SHAP weights are computed once
/// and shared by the methods that use them.
pub fn run_methods(
    data: &AbstractionMatrix,
    targets: &[String],
    methods: &[Method],
    base: &MethodConfig,
) -> Result<Vec<(Method, Vec<RankedRuleSet>)>> {
    for t in targets {
        output_index(t)?;
    }
    let weights = if methods.iter().any(|m| m.uses_shap()) {
        Some(compute_feature_weights(data, &base.shap, base.seed)?)
    } else {
        None
    };
    let uniform = FeatureWeights::uniform(N_INPUTS);
    let mut out = Vec::new();
    for &method in methods {
        let cfg = MethodConfig { method, ..base.clone() };
        let mut sets = Vec::new();
        for target in targets {
            let w = match &weights {
                Some(all) if method.uses_shap() => &all[output_index(target)?],
                _ => &uniform,
            };
            sets.push(run_method_with_weights(data, target, &cfg, w)?);
        }
        out.push((method, sets));
    }
    Ok(out)
}

/// (input, output) pairs tested by the top-`k` rules of any rule set.
pub fn certificate_pairs(rulesets: &[RankedRuleSet], k: usize) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = rulesets
        .iter()
        .flat_map(|s| s.rules.iter().take(k))
        .flat_map(|r| r.rule.features().into_iter().map(|f| (f.to_string(), r.rule.target.clone())).collect::<Vec<_>>())
        .collect();
    pairs.sort();
    pairs.dedup();
    pairs
}

/// Runs every method on every target, scores them against `truths` when
/// given, and certifies the feature/target pairs of the top-ranked rules.
pub fn run_audit(
    data: &AbstractionMatrix,
    targets: &[String],
    methods: &[Method],
    k_values: &[usize],
    truths: Option<&[GroundTruthRule]>,
    base: &MethodConfig,
) -> Result<(EvaluationReport, Vec<(Method, Vec<RankedRuleSet>)>)> {
    if targets.is_empty() || methods.is_empty() || k_values.is_empty() {
        return Err(AuditError::Config("targets, methods and k values must be non-empty".into()));
    }
    let results = run_methods(data, targets, methods, base)?;
    let report = evaluate_results(data, &results, k_values, truths)?;
    Ok((report, results))
}

/// Scores existing rule sets and certifies the feature/target pairs of
/// their top `max(k_values)` rules on `data`.
pub fn evaluate_results(
    data: &AbstractionMatrix,
    results: &[(Method, Vec<RankedRuleSet>)],
    k_values: &[usize],
    truths: Option<&[GroundTruthRule]>,
) -> Result<EvaluationReport> {
    let mut evaluations = Vec::new();
    let mut all_sets = Vec::new();
    for (method, sets) in results {
        // truths on targets this method was not run on are not scored
        let scored: Option<Vec<GroundTruthRule>> =
            truths.map(|ts| ts.iter().filter(|t| sets.iter().any(|s| s.target == t.target)).cloned().collect());
        evaluations.push(evaluate_method(method.name(), sets, scored.as_deref(), k_values)?);
        all_sets.extend(sets.iter().cloned());
    }
    let k_max = k_values.iter().copied().max().unwrap_or(1);
    let pairs = certificate_pairs(&all_sets, k_max);
    let certificates = certificate_table(data, &pairs, 0.05)?;
    Ok(EvaluationReport { k_values: k_values.to_vec(), methods: evaluations, certificates, config_hash: None })
}
