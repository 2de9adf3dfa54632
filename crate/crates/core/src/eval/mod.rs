//! Faithfulness metrics against injected ground truth, and the statistics
//! behind correlation certificates.

mod dcor;
mod matching;
mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use dcor::{distance_correlation, DcorTest};
pub use matching::canonical_match;
pub use stats::{
    fractional_ranks, holm_bonferroni, pearson, spearman, wilcoxon_signed_rank, Holm, Spearman, Wilcoxon,
    WILCOXON_EXACT_MAX,
};

use crate::dataset::AbstractionMatrix;
use crate::error::{AuditError, Result};
use crate::features::{input_index, output_index};
use crate::pipeline::RankedRuleSet;
use crate::sim::GroundTruthRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub truth_id: String,
    pub bias: String,
    pub matched_rank: Option<usize>,
    pub matched_rule: Option<String>,
}

impl MatchResult {
    pub fn reciprocal_rank(&self, k: usize) -> f64 {
        match self.matched_rank {
            Some(r) if r <= k => 1.0 / r as f64,
            _ => 0.0,
        }
    }
}

/// Finds, for each truth, the first matching rule in the ranked set of its target.
pub fn match_truths(rulesets: &[RankedRuleSet], truths: &[GroundTruthRule]) -> Result<Vec<MatchResult>> {
    let mut out = Vec::with_capacity(truths.len());
    for truth in truths {
        let mut found = None;
        if let Some(set) = rulesets.iter().find(|s| s.target == truth.target) {
            for ranked in &set.rules {
                if canonical_match(&ranked.rule, truth)? {
                    found = Some((ranked.rank, ranked.rule.to_string()));
                    break;
                }
            }
        }
        out.push(MatchResult {
            truth_id: truth.id.clone(),
            bias: truth.bias.clone(),
            matched_rank: found.as_ref().map(|f| f.0),
            matched_rule: found.map(|f| f.1),
        });
    }
    Ok(out)
}

/// Mean over truths of `1/rank` when `rank <= k`, else 0.
pub fn mrr_at_k(results: &[MatchResult], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(AuditError::Domain("k must be at least 1".into()));
    }
    if results.is_empty() {
        return Err(AuditError::Domain("no ground-truth rules to score".into()));
    }
    Ok(results.iter().map(|r| r.reciprocal_rank(k)).sum::<f64>() / results.len() as f64)
}

/// MRR@k computed separately for each bias.
pub fn mrr_by_bias(results: &[MatchResult], k: usize) -> Result<BTreeMap<String, f64>> {
    let mut groups: BTreeMap<String, Vec<MatchResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.bias.clone()).or_default().push(r.clone());
    }
    groups.into_iter().map(|(b, rs)| Ok((b, mrr_at_k(&rs, k)?))).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleCounts {
    pub total: usize,
    pub per_target: BTreeMap<String, usize>,
}

pub fn conciseness(rulesets: &[RankedRuleSet]) -> RuleCounts {
    let mut counts = RuleCounts::default();
    for s in rulesets {
        *counts.per_target.entry(s.target.clone()).or_default() += s.rules.len();
        counts.total += s.rules.len();
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCertificate {
    pub input_feature: String,
    pub output_feature: String,
    pub dcorr: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub significant_after_holm: bool,
}

/// Distance-correlation certificates for the given (input, output) pairs,
/// with Holm correction across the whole table.
pub fn certificate_table(data: &AbstractionMatrix, pairs: &[(String, String)], alpha: f64) -> Result<Vec<CorrelationCertificate>> {
    let mut certs = Vec::with_capacity(pairs.len());
    for (input, output) in pairs {
        let x = data.inputs().column(input_index(input)?);
        let y = data.output_column(output_index(output)?);
        let (dcorr, t, p) = match distance_correlation(&x, &y) {
            Ok(d) => (d.dcorr, d.t_statistic, d.p_value),
            Err(AuditError::UndefinedCorrelation(_)) => (0.0, 0.0, 1.0),
            Err(e) => return Err(e),
        };
        certs.push(CorrelationCertificate {
            input_feature: input.clone(),
            output_feature: output.clone(),
            dcorr,
            t_statistic: t,
            p_value: p,
            n: x.len(),
            significant_after_holm: false,
        });
    }
    let p: Vec<f64> = certs.iter().map(|c| c.p_value).collect();
    let holm = holm_bonferroni(&p, alpha)?;
    for (c, r) in certs.iter_mut().zip(holm.reject) {
        c.significant_after_holm = r;
    }
    Ok(certs)
}

pub fn write_certificates_csv<W: Write>(certs: &[CorrelationCertificate], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["input_feature", "output_feature", "dcorr", "t", "p", "significant_after_holm"])?;
    for c in certs {
        wtr.write_record([
            c.input_feature.clone(),
            c.output_feature.clone(),
            c.dcorr.to_string(),
            c.t_statistic.to_string(),
            c.p_value.to_string(),
            c.significant_after_holm.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Scores of one method across its per-target rule sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEvaluation {
    pub method: String,
    pub rule_counts: RuleCounts,
    /// `"mrr@k"` to the aggregate value; empty without ground truth.
    pub mrr: BTreeMap<String, f64>,
    /// bias name to `"mrr@k"` to value.
    pub mrr_by_bias: BTreeMap<String, BTreeMap<String, f64>>,
    pub matches: Vec<MatchResult>,
}

pub fn mrr_key(k: usize) -> String {
    format!("mrr@{k}")
}

pub fn evaluate_method(
    method: &str,
    rulesets: &[RankedRuleSet],
    truths: Option<&[GroundTruthRule]>,
    k_values: &[usize],
) -> Result<MethodEvaluation> {
    let mut eval = MethodEvaluation {
        method: method.to_string(),
        rule_counts: conciseness(rulesets),
        mrr: BTreeMap::new(),
        mrr_by_bias: BTreeMap::new(),
        matches: Vec::new(),
    };
    if let Some(truths) = truths.filter(|t| !t.is_empty()) {
        eval.matches = match_truths(rulesets, truths)?;
        for &k in k_values {
            eval.mrr.insert(mrr_key(k), mrr_at_k(&eval.matches, k)?);
            for (bias, v) in mrr_by_bias(&eval.matches, k)? {
                eval.mrr_by_bias.entry(bias).or_default().insert(mrr_key(k), v);
            }
        }
    }
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub k_values: Vec<usize>,
    pub methods: Vec<MethodEvaluation>,
    pub certificates: Vec<CorrelationCertificate>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl EvaluationReport {
    /// Plain-text table: one row per method with rule count and MRR columns.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>8}", "method", "# rules");
        for k in &self.k_values {
            out.push_str(&format!(" {:>8}", mrr_key(*k)));
        }
        out.push('\n');
        for m in &self.methods {
            out.push_str(&format!("{:<20} {:>8}", m.method, m.rule_counts.total));
            for k in &self.k_values {
                match m.mrr.get(&mrr_key(*k)) {
                    Some(v) => out.push_str(&format!(" {v:>8.3}")),
                    None => out.push_str(&format!(" {:>8}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(rank: Option<usize>) -> MatchResult {
        MatchResult { truth_id: "x".into(), bias: "b".into(), matched_rank: rank, matched_rule: None }
    }

    #[test]
    fn mrr_examples() {
        let rs = [result(Some(1)), result(Some(4)), result(None)];
        assert!((mrr_at_k(&rs, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((mrr_at_k(&rs, 10).unwrap() - 1.25 / 3.0).abs() < 1e-15);
        assert_eq!(mrr_at_k(&vec![result(Some(1)); 4], 1).unwrap(), 1.0);
        assert!(mrr_at_k(&[], 1).is_err());
        assert!(mrr_at_k(&rs, 0).is_err());
    }

    #[test]
    fn holm_fixture() {
        let h = holm_bonferroni(&[0.01, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(h.reject, vec![true, false, false]);
        assert!((h.adjusted[0] - 0.03).abs() < 1e-15);
        assert!((h.adjusted[1] - 0.06).abs() < 1e-15);
        assert!((h.adjusted[2] - 0.06).abs() < 1e-15);
        assert_eq!(holm_bonferroni(&[0.0; 4], 0.05).unwrap().reject, vec![true; 4]);
        assert_eq!(holm_bonferroni(&[0.04], 0.05).unwrap().reject, vec![true]);
    }

    #[test]
    fn wilcoxon_small_exact() {
        let w = wilcoxon_signed_rank(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!((w.p_value - 0.25).abs() < 1e-15);
        assert!(matches!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]), Err(AuditError::Degenerate(_))));
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let cube: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert_eq!(spearman(&x, &cube).unwrap().r, 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap().r, -1.0);
        // ranks (1.5, 1.5, 3) vs (1, 2, 3): r = 1.5 / sqrt(1.5 * 2)
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap().r;
        assert!((r - 1.5 / 3f64.sqrt()).abs() < 1e-12);
        assert!(spearman(&[1.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn dcor_affine_and_constant() {
        let x: Vec<f64> = (0..20).map(|i| (i * i % 7) as f64 + 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((distance_correlation(&x, &y).unwrap().dcorr - 1.0).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((distance_correlation(&x, &neg).unwrap().dcorr - 1.0).abs() < 1e-9);
        assert!(matches!(distance_correlation(&x, &[1.0; 20]), Err(AuditError::UndefinedCorrelation(_))));
        assert!(matches!(distance_correlation(&x[..3], &y[..3]), Err(AuditError::InsufficientData(_))));
    }
}
