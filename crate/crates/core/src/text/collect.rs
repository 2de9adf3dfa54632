//! Turns topics into an abstraction matrix by querying the audited model
//! and the judge, then measuring the proxy metrics on each explanation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::chunk::{chunk_and_aggregate, Aggregate, ChunkClassifier};
use super::fog::gunning_fog;
use super::llm::{CachedExplanation, ChatBackend, ExplanationCache, TextProviderConfig};
use super::prompts::{parse_judge_response, render_judge_prompt, render_query, DEFAULT_QUERY_TEMPLATE};
use crate::dataset::{AbstractionMatrix, TopicRecord};
use crate::error::{AuditError, Result};
use crate::features::{Matrix, INPUT_NAMES, JUDGED_OUTPUTS, N_INPUTS, N_OUTPUTS, OUTPUT_NAMES};
use crate::sim::BiasSpec;

pub struct Providers<'a> {
    /// The model under audit.
    pub target: &'a dyn ChatBackend,
    /// The judge that scores input properties and judged biases.
    pub judge: &'a dyn ChatBackend,
    pub sentiment: &'a dyn ChunkClassifier,
    pub subjectivity: &'a dyn ChunkClassifier,
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub provider: TextProviderConfig,
    pub query_template: String,
    /// Injected bias; its instruction becomes the system message.
    pub bias: Option<BiasSpec>,
    pub jobs: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { provider: TextProviderConfig::default(), query_template: DEFAULT_QUERY_TEMPLATE.into(), bias: None, jobs: 4 }
    }
}

/// Asks the judge and parses its score, retrying unparseable answers.
pub fn judge_score(judge: &dyn ChatBackend, kind: &str, subject: &str, retries: usize) -> Result<u8> {
    let prompt = render_judge_prompt(kind, subject)?;
    let mut last = None;
    for _ in 0..=retries {
        let raw = judge.generate(&prompt.rendered_text, None)?;
        match parse_judge_response(&raw) {
            Ok((score, _)) => return Ok(score),
            Err(e @ AuditError::Parse(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn score_inputs(judge: &dyn ChatBackend, topic: &str, retries: usize) -> Result<[f64; N_INPUTS]> {
    let mut u = [0.0; N_INPUTS];
    for (slot, kind) in u.iter_mut().zip(INPUT_NAMES) {
        *slot = judge_score(judge, kind, topic, retries)? as f64;
    }
    Ok(u)
}

pub fn measure_outputs(explanation: &str, providers: &Providers, cfg: &TextProviderConfig) -> Result<[f64; N_OUTPUTS]> {
    let mut v = [0.0; N_OUTPUTS];
    for (slot, name) in v.iter_mut().zip(OUTPUT_NAMES) {
        *slot = match name {
            "gunning_fog" => gunning_fog(explanation)?,
            "length_chars" => explanation.chars().count() as f64,
            "sentiment" => chunk_and_aggregate(explanation, providers.sentiment, Aggregate::Sentiment, cfg)?,
            "subjectivity" => chunk_and_aggregate(explanation, providers.subjectivity, Aggregate::Subjectivity, cfg)?,
            judged => {
                debug_assert!(JUDGED_OUTPUTS.contains(&judged));
                judge_score(providers.judge, judged, explanation, cfg.retries)? as f64
            }
        };
    }
    Ok(v)
}

fn explain(
    topic: &TopicRecord,
    u: &[f64],
    providers: &Providers,
    cfg: &CollectConfig,
    cache: Option<&Mutex<ExplanationCache>>,
) -> Result<String> {
    let prompt = render_query(&cfg.query_template, &topic.text);
    let system = match &cfg.bias {
        Some(b) => b.instruction_for(u)?,
        None => None,
    };
    if let Some(c) = cache {
        if let Some(text) = c.lock().expect("cache lock").get(&topic.id, &prompt, system.as_deref()) {
            return Ok(text.to_string());
        }
    }
    let text = providers.target.generate(&prompt, system.as_deref())?;
    if let Some(c) = cache {
        c.lock().expect("cache lock").insert(CachedExplanation { id: topic.id.clone(), prompt, system, text: text.clone() })?;
    }
    Ok(text)
}

fn collect_one(topic: &TopicRecord, providers: &Providers, cfg: &CollectConfig, cache: Option<&Mutex<ExplanationCache>>) -> Result<([f64; N_INPUTS], [f64; N_OUTPUTS])> {
    let u = score_inputs(providers.judge, &topic.text, cfg.provider.retries)?;
    let text = explain(topic, &u, providers, cfg, cache)?;
    let v = measure_outputs(&text, providers, &cfg.provider)?;
    Ok((u, v))
}

/// Scores every topic with up to `cfg.jobs` concurrent workers. Row order
/// follows `topics`; the first failure aborts the run.
pub fn collect_abstractions(
    topics: &[TopicRecord],
    providers: &Providers,
    cfg: &CollectConfig,
    cache: Option<ExplanationCache>,
) -> Result<AbstractionMatrix> {
    cfg.provider.validate()?;
    if topics.is_empty() {
        return Err(AuditError::EmptyInput("no topics to abstract".into()));
    }
    let cache = cache.map(Mutex::new);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<([f64; N_INPUTS], [f64; N_OUTPUTS])>>>> =
        Mutex::new((0..topics.len()).map(|_| None).collect());
    let failed = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.clamp(1, topics.len()) {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= topics.len() {
                    break;
                }
                let r = collect_one(&topics[i], providers, cfg, cache.as_ref());
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut inputs = Vec::with_capacity(topics.len() * N_INPUTS);
    let mut outputs = Vec::with_capacity(topics.len() * N_OUTPUTS);
    for r in results.into_inner().expect("results lock") {
        // A missing slot means a worker stopped early after another failure.
        let Some(r) = r else { continue };
        let (u, v) = r?;
        inputs.extend_from_slice(&u);
        outputs.extend_from_slice(&v);
    }
    let ids = topics.iter().map(|t| t.id.clone()).collect();
    AbstractionMatrix::new(ids, Matrix::new(topics.len(), N_INPUTS, inputs)?, Matrix::new(topics.len(), N_OUTPUTS, outputs)?)
}
