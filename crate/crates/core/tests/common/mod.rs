//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use bias_audit::lasso::LassoFit;
use bias_audit::rules::DesignMatrix;

/// Bias-corrected distance correlation from full U-centered distance matrices.
pub fn naive_dcor(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let ucenter = |v: &[f64]| -> Vec<Vec<f64>> {
        let d: Vec<Vec<f64>> = v.iter().map(|a| v.iter().map(|b| (a - b).abs()).collect()).collect();
        let row: Vec<f64> = d.iter().map(|r| r.iter().sum()).collect();
        let total: f64 = row.iter().sum();
        let nf = n as f64;
        let mut u = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    u[i][j] = d[i][j] - row[i] / (nf - 2.0) - row[j] / (nf - 2.0) + total / ((nf - 1.0) * (nf - 2.0));
                }
            }
        }
        u
    };
    let (a, b) = (ucenter(x), ucenter(y));
    let dot = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += p[i][j] * q[i][j];
                }
            }
        }
        s / (n as f64 * (n as f64 - 3.0))
    };
    dot(&a, &b) / (dot(&a, &a) * dot(&b, &b)).sqrt()
}

/// Two-sided signed-rank p-value by enumerating all 2^n sign patterns.
pub fn wilcoxon_enumerated(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    // average ranks, computed pairwise
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let stat = w_plus.min(total - w_plus);
    let mut at_most = 0u64;
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if w <= stat + 1e-9 {
            at_most += 1;
        }
    }
    (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0)
}

/// Largest violation of the weighted-LASSO optimality conditions, scaled by
/// the penalty level (`alpha / rho_j`) where that is non-zero.
pub fn kkt_violation(design: &DesignMatrix, target: &[f64], sample_weights: &[f64], fit: &LassoFit) -> f64 {
    let n = design.n_rows();
    let dense = design.to_dense();
    let residual: Vec<f64> = (0..n)
        .map(|r| {
            let pred = fit.intercept + (0..design.n_cols()).map(|j| dense.get(r, j) * fit.coefficients[j]).sum::<f64>();
            target[r] - pred
        })
        .collect();
    let mut worst: f64 = (0..n).map(|r| sample_weights[r] * residual[r]).sum::<f64>().abs();
    for j in 0..design.n_cols() {
        let g: f64 = (0..n).map(|r| sample_weights[r] * dense.get(r, j) * residual[r]).sum();
        let lambda = fit.alpha / fit.rule_weights[j];
        let w = fit.coefficients[j];
        let v = if w != 0.0 { (g - lambda * w.signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        worst = worst.max(v / lambda.max(1.0));
    }
    worst
}
