use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{AuditError, Result};

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AuditError::Dimension { expected: x.len(), got: y.len() });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AuditError::UndefinedCorrelation("a sample is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub r: f64,
    pub p_value: f64,
}

/// Pearson correlation of fractional ranks; p from the t approximation with n-2 df.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() < 3 {
        return Err(AuditError::InsufficientData(format!("spearman needs n >= 3, got {}", x.len())));
    }
    let r = pearson(&fractional_ranks(x), &fractional_ranks(y))?;
    let (_, p) = super::dcor::t_test(r, x.len() as f64 - 2.0)?;
    Ok(Spearman { r, p_value: p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)`
    pub statistic: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Largest number of non-zero differences handled by the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 12;

/// Two-sided signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(AuditError::Dimension { expected: a.len(), got: b.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(AuditError::Degenerate("all paired differences are zero".into()));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = fractional_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let stat = w_plus.min(total - w_plus);
    if n <= WILCOXON_EXACT_MAX {
        // Doubled ranks are integers; count sign assignments by their positive-rank sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0u64; max_sum + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let limit = (2.0 * stat).round() as usize;
        let below: u64 = counts[..=limit].iter().sum();
        let p = (2.0 * below as f64 / 2f64.powi(n as i32)).min(1.0);
        return Ok(Wilcoxon { statistic: stat, p_value: p, n, exact: true });
    }
    let nf = n as f64;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (stat - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.cdf(z)).min(1.0);
    Ok(Wilcoxon { statistic: stat, p_value: p, n, exact: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holm {
    pub reject: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Holm step-down procedure; outputs are in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Holm> {
    if let Some(bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(AuditError::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    let mut stopped = false;
    for (i, &k) in order.iter().enumerate() {
        let factor = (m - i) as f64;
        running = running.max((factor * p_values[k]).min(1.0));
        adjusted[k] = running;
        if !stopped && p_values[k] <= alpha / factor {
            reject[k] = true;
        } else {
            stopped = true;
        }
    }
    Ok(Holm { reject, adjusted })
}
