//! Weighted LASSO over binary rule columns, solved by cyclic coordinate
//! descent with soft-thresholding, plus rule importance scores.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::rules::{feature_position, DesignMatrix, Rule};
use crate::shap::FeatureWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    pub max_iter: usize,
    /// Stop when no update moves the loss by more than `tol` times the
    /// null deviance.
    pub tol: f64,
    pub fit_intercept: bool,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-8, fit_intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub alpha: f64,
    pub rule_weights: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
}

/// How the regularization strength is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSelection {
    Fixed(f64),
    CrossValidated { folds: usize, n_alphas: usize, min_ratio: f64 },
}

impl Default for AlphaSelection {
    fn default() -> Self {
        AlphaSelection::CrossValidated { folds: 5, n_alphas: 20, min_ratio: 1e-4 }
    }
}

/// Mean of the normalized weights of the distinct features a rule tests.
pub fn rule_feature_weight(rule: &Rule, weights: &FeatureWeights, feature_names: &[String]) -> Result<f64> {
    let features = rule.features();
    let mut total = 0.0;
    for f in &features {
        total += weights.normalized[feature_position(feature_names, f)?];
    }
    Ok(total / features.len() as f64)
}

/// Minimizes `0.5 * ||v - Xw - b||^2 + alpha * sum_j |w_j| / rho_j`.
pub fn weighted_lasso(
    design: &DesignMatrix,
    target: &[f64],
    alpha: f64,
    rule_weights: &[f64],
    params: &LassoParams,
) -> Result<LassoFit> {
    let ones = vec![1.0; design.n_rows()];
    let mut solver = Solver::new(design, target, &ones, rule_weights, params)?;
    solver.solve(alpha)
}

/// [`weighted_lasso`] with per-row weights (a row of weight `c` counts as `c` copies).
pub fn weighted_lasso_rows(
    design: &DesignMatrix,
    target: &[f64],
    sample_weights: &[f64],
    alpha: f64,
    rule_weights: &[f64],
    params: &LassoParams,
) -> Result<LassoFit> {
    let mut solver = Solver::new(design, target, sample_weights, rule_weights, params)?;
    solver.solve(alpha)
}

/// Smallest alpha at which every coefficient is zero.
pub fn alpha_max(design: &DesignMatrix, target: &[f64], sample_weights: &[f64], rule_weights: &[f64], fit_intercept: bool) -> f64 {
    let total: f64 = sample_weights.iter().sum();
    let center = if fit_intercept && total > 0.0 {
        target.iter().zip(sample_weights).map(|(v, w)| v * w).sum::<f64>() / total
    } else {
        0.0
    };
    (0..design.n_cols())
        .map(|j| {
            let g: f64 = design.column(j).iter().map(|&r| sample_weights[r as usize] * (target[r as usize] - center)).sum();
            g.abs() * rule_weights[j]
        })
        .fold(0.0, f64::max)
}

/// Log-spaced decreasing grid from `alpha_max` to `alpha_max * min_ratio`.
pub fn alpha_grid(alpha_max: f64, n_alphas: usize, min_ratio: f64) -> Vec<f64> {
    if n_alphas <= 1 {
        return vec![alpha_max];
    }
    (0..n_alphas)
        .map(|k| alpha_max * min_ratio.powf(k as f64 / (n_alphas - 1) as f64))
        .collect()
}

/// Result of choosing alpha by K-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub alphas: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub best_alpha: f64,
}

/// Selects alpha by K-fold cross-validation over a log grid; rows are
/// assigned to folds by a seeded shuffle. Returns the fit on all rows.
pub fn lasso_cv(
    design: &DesignMatrix,
    target: &[f64],
    sample_weights: &[f64],
    rule_weights: &[f64],
    folds: usize,
    n_alphas: usize,
    min_ratio: f64,
    params: &LassoParams,
    seed: u64,
) -> Result<(LassoFit, CvOutcome)> {
    let n = design.n_rows();
    let top = alpha_max(design, target, sample_weights, rule_weights, params.fit_intercept);
    if top <= 0.0 {
        let mut solver = Solver::new(design, target, sample_weights, rule_weights, params)?;
        let fit = solver.solve(0.0)?;
        return Ok((fit, CvOutcome { alphas: vec![0.0], mean_errors: vec![0.0], best_alpha: 0.0 }));
    }
    let alphas = alpha_grid(top, n_alphas, min_ratio);
    let folds = folds.clamp(2, n.max(2));

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; n];
    for (k, &r) in order.iter().enumerate() {
        fold_of[r] = k % folds;
    }

    let mut errors = vec![0.0; alphas.len()];
    for fold in 0..folds {
        let train_w: Vec<f64> = (0..n).map(|r| if fold_of[r] == fold { 0.0 } else { sample_weights[r] }).collect();
        let held: Vec<usize> = (0..n).filter(|&r| fold_of[r] == fold && sample_weights[r] > 0.0).collect();
        let held_weight: f64 = held.iter().map(|&r| sample_weights[r]).sum();
        if held_weight == 0.0 {
            continue;
        }
        let mut solver = Solver::new(design, target, &train_w, rule_weights, params)?;
        for (a, &alpha) in alphas.iter().enumerate() {
            let fit = solver.solve(alpha)?;
            let pred = predict(design, &fit);
            let sse: f64 = held.iter().map(|&r| sample_weights[r] * (target[r] - pred[r]).powi(2)).sum();
            errors[a] += sse / held_weight / folds as f64;
        }
    }
    let mut best = 0;
    for a in 1..alphas.len() {
        if errors[a] < errors[best] {
            best = a;
        }
    }
    let mut solver = Solver::new(design, target, sample_weights, rule_weights, params)?;
    let mut fit = solver.solve(alphas[0])?;
    for &alpha in &alphas[1..=best] {
        fit = solver.solve(alpha)?;
    }
    Ok((fit, CvOutcome { best_alpha: alphas[best], alphas, mean_errors: errors }))
}

pub fn predict(design: &DesignMatrix, fit: &LassoFit) -> Vec<f64> {
    let mut pred = vec![fit.intercept; design.n_rows()];
    for (j, &w) in fit.coefficients.iter().enumerate() {
        if w != 0.0 {
            for &r in design.column(j) {
                pred[r as usize] += w;
            }
        }
    }
    pred
}

/// `0.5 * sum_r c_r (v_r - pred_r)^2 + alpha * sum_j |w_j| / rho_j`.
pub fn objective(design: &DesignMatrix, target: &[f64], sample_weights: &[f64], fit: &LassoFit) -> f64 {
    let pred = predict(design, fit);
    let loss: f64 = (0..target.len()).map(|r| sample_weights[r] * (target[r] - pred[r]).powi(2)).sum::<f64>() * 0.5;
    let penalty: f64 = fit.coefficients.iter().zip(&fit.rule_weights).map(|(w, rho)| w.abs() / rho).sum();
    loss + fit.alpha * penalty
}

fn soft_threshold(z: f64, level: f64) -> f64 {
    if z > level {
        z - level
    } else if z < -level {
        z + level
    } else {
        0.0
    }
}

/// Coordinate-descent state, reusable across a decreasing alpha path.
struct Solver<'a> {
    design: &'a DesignMatrix,
    weights: &'a [f64],
    rule_weights: &'a [f64],
    params: &'a LassoParams,
    col_norm: Vec<f64>,
    total_weight: f64,
    /// Weighted sum of squares of the centred target; convergence is
    /// measured against it so `tol` does not depend on the target's units.
    null_deviance: f64,
    coef: Vec<f64>,
    intercept: f64,
    residual: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(
        design: &'a DesignMatrix,
        target: &'a [f64],
        weights: &'a [f64],
        rule_weights: &'a [f64],
        params: &'a LassoParams,
    ) -> Result<Self> {
        let n = design.n_rows();
        if target.len() != n || weights.len() != n {
            return Err(AuditError::Dimension { expected: n, got: target.len().min(weights.len()) });
        }
        if rule_weights.len() != design.n_cols() {
            return Err(AuditError::Dimension { expected: design.n_cols(), got: rule_weights.len() });
        }
        if design.n_cols() == 0 {
            return Err(AuditError::EmptyInput("design matrix has no columns".into()));
        }
        if let Some(bad) = rule_weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(AuditError::Domain(format!("rule weight {bad} must be positive")));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::Domain("target contains non-finite values".into()));
        }
        let total_weight: f64 = weights.iter().sum();
        let mean = if total_weight > 0.0 { target.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total_weight } else { 0.0 };
        let null_deviance = target.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(2)).sum();
        let col_norm = (0..design.n_cols())
            .map(|j| design.column(j).iter().map(|&r| weights[r as usize]).sum())
            .collect();
        Ok(Self {
            design,
            weights,
            rule_weights,
            params,
            col_norm,
            total_weight,
            null_deviance,
            coef: vec![0.0; design.n_cols()],
            intercept: 0.0,
            residual: target.to_vec(),
        })
    }

    /// Returns the weighted squared size of the update, `norm * delta^2`.
    fn update_coordinate(&mut self, j: usize, alpha: f64) -> f64 {
        let norm = self.col_norm[j];
        let old = self.coef[j];
        if norm == 0.0 {
            self.coef[j] = 0.0;
            return 0.0;
        }
        let col = self.design.column(j);
        let mut z = 0.0;
        for &r in col {
            z += self.weights[r as usize] * self.residual[r as usize];
        }
        z += norm * old;
        let new = soft_threshold(z, alpha / self.rule_weights[j]) / norm;
        let delta = new - old;
        if delta != 0.0 {
            for &r in col {
                self.residual[r as usize] -= delta;
            }
            self.coef[j] = new;
        }
        norm * delta * delta
    }

    fn update_intercept(&mut self) -> f64 {
        if !self.params.fit_intercept || self.total_weight == 0.0 {
            return 0.0;
        }
        let shift = self.residual.iter().zip(self.weights).map(|(r, w)| r * w).sum::<f64>() / self.total_weight;
        if shift != 0.0 {
            self.residual.iter_mut().for_each(|r| *r -= shift);
            self.intercept += shift;
        }
        self.total_weight * shift * shift
    }

    fn solve(&mut self, alpha: f64) -> Result<LassoFit> {
        if !(alpha >= 0.0) {
            return Err(AuditError::Domain(format!("alpha {alpha} must be non-negative")));
        }
        let tol = self.params.tol * self.null_deviance.max(f64::MIN_POSITIVE);
        let mut iterations = 0;
        let mut converged = false;
        let all: Vec<usize> = (0..self.coef.len()).collect();
        while iterations < self.params.max_iter {
            let mut change = self.update_intercept();
            for &j in &all {
                change = change.max(self.update_coordinate(j, alpha));
            }
            iterations += 1;
            if change < tol {
                converged = true;
                break;
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| self.coef[j] != 0.0).collect();
            while iterations < self.params.max_iter {
                let mut change = self.update_intercept();
                for &j in &active {
                    change = change.max(self.update_coordinate(j, alpha));
                }
                iterations += 1;
                if change < tol {
                    break;
                }
            }
        }
        Ok(LassoFit {
            intercept: self.intercept,
            coefficients: self.coef.clone(),
            alpha,
            rule_weights: self.rule_weights.to_vec(),
            n_iterations: iterations,
            converged,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// `|w|`
    Ruleshap,
    /// `|w| * sqrt(s (1 - s))` with `s` the rule support.
    Rulefit,
}

pub fn rule_importance(coefficients: &[f64], supports: &[f64], mode: ImportanceMode) -> Result<Vec<f64>> {
    if coefficients.len() != supports.len() {
        return Err(AuditError::Dimension { expected: coefficients.len(), got: supports.len() });
    }
    coefficients
        .iter()
        .zip(supports)
        .map(|(&w, &s)| {
            if !(0.0..=1.0).contains(&s) {
                return Err(AuditError::Domain(format!("support {s} outside [0, 1]")));
            }
            Ok(match mode {
                ImportanceMode::Ruleshap => w.abs(),
                ImportanceMode::Rulefit => w.abs() * (s * (1.0 - s)).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{grid_rule, Op};

    fn single_column() -> DesignMatrix {
        DesignMatrix::from_columns(4, vec![vec![0, 1]]).unwrap()
    }

    fn no_intercept() -> LassoParams {
        LassoParams { fit_intercept: false, ..Default::default() }
    }

    #[test]
    fn closed_form_single_column() {
        let v = [2.0, 2.0, 0.0, 0.0];
        let fit = weighted_lasso(&single_column(), &v, 2.0, &[1.0], &no_intercept()).unwrap();
        assert_eq!(fit.coefficients, vec![1.0]);
        let fit = weighted_lasso(&single_column(), &v, 2.0, &[0.5], &no_intercept()).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
        let fit = weighted_lasso(&single_column(), &v, 0.0, &[1.0], &no_intercept()).unwrap();
        assert_eq!(fit.coefficients, vec![2.0]);
        assert!(fit.converged);
    }

    #[test]
    fn rejects_non_positive_rule_weight() {
        let err = weighted_lasso(&single_column(), &[1.0; 4], 1.0, &[0.0], &LassoParams::default()).unwrap_err();
        assert!(matches!(err, AuditError::Domain(_)));
    }

    #[test]
    fn exhausted_iterations_flag_non_convergence() {
        let dm = DesignMatrix::from_columns(4, vec![vec![0, 1], vec![0, 1, 2]]).unwrap();
        let fit = weighted_lasso(&dm, &[3.0, 2.0, 1.0, 0.0], 0.01, &[1.0, 1.0], &LassoParams { max_iter: 1, ..Default::default() })
            .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.n_iterations, 1);
    }

    #[test]
    fn feature_weight_of_rules() {
        let names = crate::features::input_names();
        let mut raw = vec![0.0; 11];
        raw[2] = 0.4;
        raw[5] = 0.1;
        raw[0] = 0.5;
        let w = FeatureWeights::from_raw(raw).unwrap();
        let single = grid_rule("t", &[("common", Op::Le, 2)]);
        assert!((rule_feature_weight(&single, &w, &names).unwrap() - w.normalized[2]).abs() < 1e-15);
        let pair = grid_rule("t", &[("common", Op::Le, 2), ("positive", Op::Gt, 2)]);
        let expect = (w.normalized[2] + w.normalized[5]) / 2.0;
        assert!((rule_feature_weight(&pair, &w, &names).unwrap() - expect).abs() < 1e-15);
        let same = grid_rule("t", &[("common", Op::Le, 4), ("common", Op::Gt, 1)]);
        assert!((rule_feature_weight(&same, &w, &names).unwrap() - w.normalized[2]).abs() < 1e-15);
        let bad = grid_rule("t", &[("nope", Op::Le, 4)]);
        assert!(matches!(rule_feature_weight(&bad, &w, &names), Err(AuditError::Schema(_))));
    }

    #[test]
    fn importance_modes() {
        assert_eq!(rule_importance(&[0.5], &[0.5], ImportanceMode::Ruleshap).unwrap(), vec![0.5]);
        assert_eq!(rule_importance(&[0.5], &[0.5], ImportanceMode::Rulefit).unwrap(), vec![0.25]);
        assert_eq!(rule_importance(&[0.5], &[1.0], ImportanceMode::Rulefit).unwrap(), vec![0.0]);
        assert!(rule_importance(&[0.5], &[1.5], ImportanceMode::Rulefit).is_err());
    }

    #[test]
    fn alpha_max_zeroes_everything() {
        let dm = DesignMatrix::from_columns(5, vec![vec![0, 1], vec![1, 2, 3], vec![4]]).unwrap();
        let v = [1.0, 3.0, 2.0, 0.5, -1.0];
        let rho = [1.0, 0.5, 0.25];
        let top = alpha_max(&dm, &v, &[1.0; 5], &rho, true);
        let fit = weighted_lasso(&dm, &v, top * 1.0001, &rho, &LassoParams::default()).unwrap();
        assert!(fit.coefficients.iter().all(|&w| w == 0.0));
        let fit = weighted_lasso(&dm, &v, top * 0.9, &rho, &LassoParams::default()).unwrap();
        assert!(fit.coefficients.iter().any(|&w| w != 0.0));
    }
}
