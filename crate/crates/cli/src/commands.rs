use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bias_audit::dataset::{load_abstraction_matrix, load_topics, save_abstraction_matrix, AbstractionMatrix};
use bias_audit::eval::{mrr_key, write_certificates_csv, EvaluationReport};
use bias_audit::pipeline::{evaluate_results, run_methods, Method, MethodConfig, RankedRuleSet};
use bias_audit::sim::simulate;
use bias_audit::text::{
    collect_abstractions, ChatBackend, ChatClient, CollectConfig, ExplanationCache, HttpClassifier, Providers,
    TextProviderConfig,
};
use bias_audit::{AuditError, Result};

use crate::artifacts::*;
use crate::config::AuditConfig;

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AuditError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Simulates a dataset into `dir`, returning the written file names.
fn write_simulation(cfg: &AuditConfig, dir: &Path) -> Result<Vec<String>> {
    let sim_cfg = cfg.simulator.clone().unwrap_or_default();
    let out = simulate(&sim_cfg)?;
    save_abstraction_matrix(&out.matrix, dir.join(ABSTRACTION_FILE))?;
    let truth = GroundTruthFile {
        config_hash: cfg.hash("simulate"),
        data_sha256: sha256_file(&dir.join(ABSTRACTION_FILE))?,
        biases: sim_cfg.biases.clone(),
        rules: out.ground_truth,
    };
    write_json(&dir.join(GROUND_TRUTH_FILE), &truth)?;
    Ok(vec![ABSTRACTION_FILE.into(), GROUND_TRUTH_FILE.into()])
}

pub fn cmd_simulate(cfg: &AuditConfig) -> Result<()> {
    if cfg.data.is_some() {
        return Err(AuditError::Config("simulate generates data; drop `data` from the configuration".into()));
    }
    let dir = cfg.output_dir()?;
    prepare_dir(dir)?;
    let files = write_simulation(cfg, dir)?;
    write_manifest(dir, "simulate", cfg, cfg.simulator.clone().unwrap_or_default().population.seed, &files)?;
    println!("wrote {} and {} to {}", ABSTRACTION_FILE, GROUND_TRUTH_FILE, dir.display());
    Ok(())
}

pub fn cmd_abstract(cfg: &AuditConfig) -> Result<()> {
    let topics_path = cfg.topics.as_ref().ok_or_else(|| AuditError::Config("abstract needs --topics".into()))?;
    let dir = cfg.output_dir()?;
    let (Some(sentiment_url), Some(subjectivity_url)) = (&cfg.sentiment_endpoint, &cfg.subjectivity_endpoint) else {
        return Err(AuditError::Config("abstract needs `sentiment_endpoint` and `subjectivity_endpoint`".into()));
    };
    // credentials are checked here, before any request is sent
    let target = ChatClient::from_env(cfg.provider.clone())?;
    let judge_cfg = TextProviderConfig { model: cfg.judge_model.clone().unwrap_or_else(|| cfg.provider.model.clone()), ..cfg.provider.clone() };
    let judge = ChatClient::from_env(judge_cfg)?;
    let sentiment = HttpClassifier::from_env(sentiment_url.clone(), &cfg.provider)?;
    let subjectivity = HttpClassifier::from_env(subjectivity_url.clone(), &cfg.provider)?;
    let bias = cfg.bias.as_ref().map(|b| b.resolve()).transpose()?;
    let topics = load_topics(topics_path)?;
    prepare_dir(dir)?;
    let cache = ExplanationCache::open(dir.join(EXPLANATIONS_FILE))?;
    let providers = Providers {
        target: &target as &dyn ChatBackend,
        judge: &judge,
        sentiment: &sentiment,
        subjectivity: &subjectivity,
    };
    let collect = CollectConfig { provider: cfg.provider.clone(), query_template: cfg.query_template.clone(), bias, jobs: cfg.jobs.max(1) };
    let matrix = collect_abstractions(&topics, &providers, &collect, Some(cache))?;
    save_abstraction_matrix(&matrix, dir.join(ABSTRACTION_FILE))?;
    write_manifest(dir, "abstract", cfg, cfg.seed, &[ABSTRACTION_FILE.into(), EXPLANATIONS_FILE.into()])?;
    println!("abstracted {} topics into {}", matrix.len(), dir.join(ABSTRACTION_FILE).display());
    Ok(())
}

struct Dataset {
    matrix: AbstractionMatrix,
    path: PathBuf,
    sha256: String,
}

/// Loads `data`, or simulates into `dir` when a simulator is configured.
/// Returns the dataset and any files written.
fn resolve_data(cfg: &AuditConfig, dir: &Path) -> Result<(Dataset, Vec<String>)> {
    let (path, written) = match (&cfg.data, &cfg.simulator) {
        (Some(_), Some(_)) => return Err(AuditError::Config("set either `data` or `simulator`, not both".into())),
        (None, None) => return Err(AuditError::Config("no input data; pass --data or configure `simulator`".into())),
        (Some(p), None) => (p.clone(), Vec::new()),
        (None, Some(_)) => {
            let files = write_simulation(cfg, dir)?;
            (dir.join(ABSTRACTION_FILE), files)
        }
    };
    let matrix = load_abstraction_matrix(&path)?;
    let sha256 = sha256_file(&path)?;
    let path = fs::canonicalize(&path)?;
    Ok((Dataset { matrix, path, sha256 }, written))
}

fn method_config(cfg: &AuditConfig) -> MethodConfig {
    MethodConfig { seed: cfg.seed, ..cfg.pipeline.clone() }
}

fn write_rulesets(cfg: &AuditConfig, command: &str, dir: &Path, data: &Dataset, results: &[(Method, Vec<RankedRuleSet>)]) -> Result<Vec<String>> {
    let hash = cfg.hash(command);
    let mut files = Vec::new();
    let mut all = Vec::new();
    for (method, sets) in results {
        for set in sets {
            let rel = format!("rules/{}/{}.json", method.name(), set.target);
            let file = RuleSetFile { config_hash: hash.clone(), data_sha256: data.sha256.clone(), ruleset: set.clone() };
            write_json(&dir.join(&rel), &file)?;
            files.push(rel);
            all.push(set.clone());
        }
    }
    let combined = RuleSetsFile { config_hash: hash, data_sha256: data.sha256.clone(), data_path: data.path.clone(), seed: cfg.seed, rulesets: all };
    write_json(&dir.join(RULESETS_FILE), &combined)?;
    files.push(RULESETS_FILE.into());
    Ok(files)
}

pub fn cmd_explain(cfg: &AuditConfig) -> Result<()> {
    let methods = cfg.parsed_methods()?;
    let targets = cfg.checked_targets()?;
    let dir = cfg.output_dir()?;
    prepare_dir(dir)?;
    let (data, mut files) = resolve_data(cfg, dir)?;
    let results = run_methods(&data.matrix, &targets, &methods, &method_config(cfg))?;
    files.extend(write_rulesets(cfg, "explain", dir, &data, &results)?);
    write_manifest(dir, "explain", cfg, cfg.seed, &files)?;
    for (m, sets) in &results {
        let n: usize = sets.iter().map(|s| s.len()).sum();
        println!("{:<20} {n:>5} rules over {} targets", m.name(), sets.len());
    }
    Ok(())
}

/// Human-readable report: method table, per-bias MRR and certificates.
pub fn render_report(report: &EvaluationReport) -> String {
    let mut out = report.table();
    let mut by_bias: BTreeMap<&str, Vec<(&str, &BTreeMap<String, f64>)>> = BTreeMap::new();
    for m in &report.methods {
        for (bias, scores) in &m.mrr_by_bias {
            by_bias.entry(bias.as_str()).or_default().push((m.method.as_str(), scores));
        }
    }
    for (bias, rows) in by_bias {
        out.push_str(&format!("\nbias {bias}\n"));
        for (method, scores) in rows {
            out.push_str(&format!("{method:<20}"));
            for k in &report.k_values {
                out.push_str(&format!(" {}={:.3}", mrr_key(*k), scores.get(&mrr_key(*k)).copied().unwrap_or(0.0)));
            }
            out.push('\n');
        }
    }
    if !report.certificates.is_empty() {
        out.push_str(&format!("\n{:<26} {:<22} {:>7} {:>9} {:>10} {:>5}\n", "input", "output", "dcorr", "t", "p", "holm"));
        for c in &report.certificates {
            out.push_str(&format!(
                "{:<26} {:<22} {:>7.3} {:>9.2} {:>10.2e} {:>5}\n",
                c.input_feature, c.output_feature, c.dcorr, c.t_statistic, c.p_value, if c.significant_after_holm { "yes" } else { "no" }
            ));
        }
    }
    if let Some(h) = &report.config_hash {
        out.push_str(&format!("\nconfig hash {h}\n"));
    }
    out
}

fn group_by_method(sets: &[RankedRuleSet]) -> Result<Vec<(Method, Vec<RankedRuleSet>)>> {
    let mut out: Vec<(Method, Vec<RankedRuleSet>)> = Vec::new();
    for s in sets {
        let m: Method = s.method.parse().map_err(|_| AuditError::Schema(format!("unknown method `{}` in rule sets", s.method)))?;
        match out.iter_mut().find(|(k, _)| *k == m) {
            Some((_, v)) => v.push(s.clone()),
            None => out.push((m, vec![s.clone()])),
        }
    }
    Ok(out)
}

fn write_report(cfg: &AuditConfig, command: &str, dir: &Path, mut report: EvaluationReport) -> Result<Vec<String>> {
    report.config_hash = Some(cfg.hash(command));
    write_json(&dir.join(REPORT_FILE), &report)?;
    fs::write(dir.join(REPORT_TEXT_FILE), render_report(&report))?;
    write_certificates_csv(&report.certificates, fs::File::create(dir.join(CERTIFICATES_FILE))?)?;
    print!("{}", report.table());
    Ok(vec![REPORT_FILE.into(), REPORT_TEXT_FILE.into(), CERTIFICATES_FILE.into()])
}

pub fn cmd_evaluate(cfg: &AuditConfig, force: bool) -> Result<()> {
    let k = cfg.checked_k()?;
    let rules_path = cfg.rules.as_ref().ok_or_else(|| AuditError::Config("evaluate needs --rules".into()))?;
    let truth_path = cfg.ground_truth.as_ref().ok_or_else(|| AuditError::Config("evaluate needs ground truth; pass --truth".into()))?;
    let dir = cfg.output_dir()?;
    let rulesets: RuleSetsFile = read_json(rules_path)?;
    let truth: GroundTruthFile = read_json(truth_path)?;
    let data_path = cfg.data.clone().unwrap_or_else(|| rulesets.data_path.clone());
    let data_sha = sha256_file(&data_path)?;
    if !force {
        if truth.data_sha256 != rulesets.data_sha256 {
            return Err(AuditError::Contract(format!(
                "rule sets were fitted on data {} but the ground truth describes data {}; pass --force to override",
                short(&rulesets.data_sha256),
                short(&truth.data_sha256)
            )));
        }
        if data_sha != rulesets.data_sha256 {
            return Err(AuditError::Contract(format!(
                "{} has digest {} but the rule sets were fitted on {}; pass --force to override",
                data_path.display(),
                short(&data_sha),
                short(&rulesets.data_sha256)
            )));
        }
    }
    let matrix = load_abstraction_matrix(&data_path)?;
    let results = group_by_method(&rulesets.rulesets)?;
    let report = evaluate_results(&matrix, &results, &k, Some(&truth.rules))?;
    prepare_dir(dir)?;
    let files = write_report(cfg, "evaluate", dir, report)?;
    write_manifest(dir, "evaluate", cfg, rulesets.seed, &files)
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

pub fn cmd_audit(cfg: &AuditConfig) -> Result<()> {
    let methods = cfg.parsed_methods()?;
    let targets = cfg.checked_targets()?;
    let k = cfg.checked_k()?;
    let dir = cfg.output_dir()?;
    prepare_dir(dir)?;
    let (data, mut files) = resolve_data(cfg, dir)?;
    let truth = match (&cfg.ground_truth, cfg.simulator.is_some()) {
        (Some(p), _) => Some(read_json::<GroundTruthFile>(p)?.rules),
        (None, true) => Some(read_json::<GroundTruthFile>(&dir.join(GROUND_TRUTH_FILE))?.rules),
        (None, false) => None,
    };
    let results = run_methods(&data.matrix, &targets, &methods, &method_config(cfg))?;
    files.extend(write_rulesets(cfg, "audit", dir, &data, &results)?);
    let report = evaluate_results(&data.matrix, &results, &k, truth.as_deref())?;
    files.extend(write_report(cfg, "audit", dir, report)?);
    write_manifest(dir, "audit", cfg, cfg.seed, &files)
}
