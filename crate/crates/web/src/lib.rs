//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings so the page needs no glue
//! beyond the generated `wasm-bindgen` module.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use bias_audit::features::OUTPUT_NAMES;
use bias_audit::pipeline::{run_audit, Method, MethodConfig, RankedRuleSet, ShapParams};
use bias_audit::sim::{builtin_bias, simulate, Noise, PopulationConfig, SimConfig};
use bias_audit::text::{gunning_fog, parse_judge_response, render_judge_prompt};
use bias_audit::AuditError;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoAudit {
    pub biases: Vec<String>,
    pub n_per_cell: usize,
    pub noise_fraction: f64,
    pub seed: u64,
    pub methods: Vec<String>,
    pub targets: Vec<String>,
    pub n_permutations: usize,
    pub top: usize,
}

impl Default for DemoAudit {
    fn default() -> Self {
        Self {
            biases: vec!["b1".into()],
            n_per_cell: 6,
            noise_fraction: 0.0,
            seed: 0,
            methods: vec!["ruleshap".into(), "rulefit".into()],
            targets: vec!["length_chars".into()],
            n_permutations: 2,
            top: 5,
        }
    }
}

#[derive(Debug, Serialize)]
struct DemoRule {
    rank: usize,
    rule: String,
    coefficient: f64,
    importance: f64,
}

#[derive(Debug, Serialize)]
struct DemoRuleSet {
    method: String,
    target: String,
    rules: Vec<DemoRule>,
}

#[derive(Debug, Serialize)]
struct DemoReport {
    rows: usize,
    truths: Vec<String>,
    table: String,
    rulesets: Vec<DemoRuleSet>,
}

fn to_js(e: AuditError) -> JsError {
    JsError::new(&e.to_string())
}

fn summarize(set: &RankedRuleSet, top: usize) -> DemoRuleSet {
    DemoRuleSet {
        method: set.method.clone(),
        target: set.target.clone(),
        rules: set
            .rules
            .iter()
            .take(top)
            .map(|r| DemoRule { rank: r.rank, rule: r.rule.to_string(), coefficient: r.rule.coefficient, importance: r.rule.importance })
            .collect(),
    }
}

/// Simulates a small population with the chosen biases, runs the chosen
/// methods and returns the top rules and the MRR table as JSON.
pub fn demo_audit(config: &DemoAudit) -> Result<String, AuditError> {
    let biases = config.biases.iter().map(|b| builtin_bias(b)).collect::<Result<Vec<_>, _>>()?;
    let sim_cfg = SimConfig {
        population: PopulationConfig { n_per_cell: config.n_per_cell.clamp(1, 60), redundancy: 2, seed: config.seed },
        biases,
        noise: Noise::Relative { fraction: config.noise_fraction },
        noise_seed: config.seed.wrapping_add(1),
        ..Default::default()
    };
    let sim = simulate(&sim_cfg)?;
    let methods = config.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?;
    for t in &config.targets {
        if !OUTPUT_NAMES.contains(&t.as_str()) {
            return Err(AuditError::Config(format!("unknown target `{t}`")));
        }
    }
    let base = MethodConfig { shap: ShapParams { n_permutations: config.n_permutations.max(1) }, ..MethodConfig::for_method(Method::Ruleshap, config.seed) };
    let truths: Vec<_> = sim.ground_truth.iter().filter(|t| config.targets.contains(&t.target)).cloned().collect();
    let (report, results) = run_audit(&sim.matrix, &config.targets, &methods, &[1, 3, 10], Some(&truths), &base)?;
    let out = DemoReport {
        rows: sim.matrix.len(),
        truths: truths.iter().map(|t| format!("{} ({} region{})", t.id, t.disjuncts.len(), if t.disjuncts.len() == 1 { "" } else { "s" })).collect(),
        table: report.table(),
        rulesets: results.iter().flat_map(|(_, sets)| sets.iter().map(|s| summarize(s, config.top))).collect(),
    };
    Ok(serde_json::to_string(&out)?)
}

#[wasm_bindgen(js_name = runAudit)]
pub fn run_audit_js(config_json: &str) -> Result<String, JsError> {
    let config: DemoAudit = serde_json::from_str(config_json).map_err(|e| JsError::new(&e.to_string()))?;
    demo_audit(&config).map_err(to_js)
}

#[derive(Debug, Serialize)]
struct TextReport {
    gunning_fog: f64,
    length_chars: usize,
}

pub fn text_report(text: &str) -> Result<String, AuditError> {
    let r = TextReport { gunning_fog: gunning_fog(text)?, length_chars: text.chars().count() };
    Ok(serde_json::to_string(&r)?)
}

/// Readability proxies of a piece of text.
#[wasm_bindgen(js_name = textMetrics)]
pub fn text_metrics_js(text: &str) -> Result<String, JsError> {
    text_report(text).map_err(to_js)
}

#[derive(Debug, Serialize)]
struct JudgeRoundTrip {
    prompt: String,
    score: Option<u8>,
    explanation: Option<String>,
    error: Option<String>,
}

pub fn judge_round_trip(kind: &str, subject: &str, response: &str) -> Result<String, AuditError> {
    let prompt = render_judge_prompt(kind, subject)?;
    let parsed = if response.trim().is_empty() { None } else { Some(parse_judge_response(response)) };
    let out = match parsed {
        Some(Ok((score, explanation))) => JudgeRoundTrip { prompt: prompt.rendered_text, score: Some(score), explanation: Some(explanation), error: None },
        Some(Err(e)) => JudgeRoundTrip { prompt: prompt.rendered_text, score: None, explanation: None, error: Some(e.to_string()) },
        None => JudgeRoundTrip { prompt: prompt.rendered_text, score: None, explanation: None, error: None },
    };
    Ok(serde_json::to_string(&out)?)
}

/// Renders a judge prompt and, when a response is given, parses it.
#[wasm_bindgen(js_name = judgePrompt)]
pub fn judge_prompt_js(kind: &str, subject: &str, response: &str) -> Result<String, JsError> {
    judge_round_trip(kind, subject, response).map_err(to_js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_audit_reports_rules() {
        let cfg = DemoAudit { n_per_cell: 3, ..Default::default() };
        let v: serde_json::Value = serde_json::from_str(&demo_audit(&cfg).unwrap()).unwrap();
        assert_eq!(v["rows"], 11 * 5 * 3 * 2);
        assert_eq!(v["rulesets"].as_array().unwrap().len(), 2);
        assert!(v["table"].as_str().unwrap().contains("mrr@1"));
    }

    #[test]
    fn demo_audit_rejects_bad_names() {
        let cfg = DemoAudit { methods: vec!["nope".into()], ..Default::default() };
        assert!(demo_audit(&cfg).is_err());
        let cfg = DemoAudit { biases: vec!["b9".into()], ..Default::default() };
        assert!(demo_audit(&cfg).is_err());
    }

    #[test]
    fn text_and_judge() {
        let v: serde_json::Value = serde_json::from_str(&text_report("The cat sat. The cat ran.").unwrap()).unwrap();
        assert!((v["gunning_fog"].as_f64().unwrap() - 1.2).abs() < 1e-12);
        let v: serde_json::Value = serde_json::from_str(&judge_round_trip("common", "Tea", "ES: 4\nSE: popular").unwrap()).unwrap();
        assert_eq!(v["score"], 4);
        let v: serde_json::Value = serde_json::from_str(&judge_round_trip("common", "Tea", "nothing").unwrap()).unwrap();
        assert!(v["error"].is_string());
    }
}
