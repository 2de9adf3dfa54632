//! Character-budget chunking and length-weighted aggregation of per-chunk
//! sentiment and subjectivity labels.

use serde::{Deserialize, Serialize};

use super::llm::TextProviderConfig;
use crate::error::{AuditError, Result};

/// Splits `text` into chunks of at most `max_chars` characters, cutting at
/// the last whitespace inside the budget (or hard-cutting a longer word).
pub fn chunk_text(text: &str, max_chars: usize) -> Vec<&str> {
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let mut end = rest.len();
        let mut last_space = None;
        for (n, (i, c)) in rest.char_indices().enumerate() {
            if n == max_chars {
                end = i;
                break;
            }
            if c.is_whitespace() {
                last_space = Some(i);
            }
        }
        if end < rest.len() {
            let next_is_space = rest[end..].starts_with(char::is_whitespace);
            if !next_is_space {
                if let Some(s) = last_space {
                    end = s;
                }
            }
        }
        let chunk = rest[..end].trim_end();
        if !chunk.is_empty() {
            chunks.push(chunk);
        }
        rest = rest[end..].trim_start();
    }
    chunks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkLabel {
    pub label: String,
    pub confidence: f64,
}

/// A per-chunk text classifier (sentiment or subjectivity model).
pub trait ChunkClassifier: Sync {
    fn classify(&self, chunk: &str) -> Result<ChunkLabel>;
}

/// Refuses to classify; used when no model has been configured.
pub struct NullClassifier;

impl ChunkClassifier for NullClassifier {
    fn classify(&self, _chunk: &str) -> Result<ChunkLabel> {
        Err(AuditError::Config("no sentiment/subjectivity classifier configured".into()))
    }
}

impl<F: Fn(&str) -> Result<ChunkLabel> + Sync> ChunkClassifier for F {
    fn classify(&self, chunk: &str) -> Result<ChunkLabel> {
        self(chunk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Labels `negative_0` .. `positive_4` mapped to polarity in [-1, 1].
    Sentiment,
    /// Labels `objective_0` / `subjective_1`, scored as P(subjective).
    Subjectivity,
}

fn class_index(label: &str) -> Result<u32> {
    label
        .rsplit('_')
        .next()
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| AuditError::Parse(format!("label `{label}` has no class index")))
}

pub fn sentiment_polarity(label: &ChunkLabel) -> Result<f64> {
    let k = class_index(&label.label)?;
    if k > 4 {
        return Err(AuditError::Parse(format!("sentiment class {k} outside 0..4")));
    }
    Ok(k as f64 / 4.0 * 2.0 - 1.0)
}

pub fn subjective_probability(label: &ChunkLabel) -> Result<f64> {
    if !(0.0..=1.0).contains(&label.confidence) {
        return Err(AuditError::Parse(format!("confidence {} outside [0, 1]", label.confidence)));
    }
    match class_index(&label.label)? {
        1 => Ok(label.confidence),
        0 => Ok(1.0 - label.confidence),
        k => Err(AuditError::Parse(format!("subjectivity class {k} outside 0..1"))),
    }
}

fn classify_with_retries(scorer: &dyn ChunkClassifier, chunk: &str, retries: usize) -> Result<ChunkLabel> {
    let mut last = None;
    for _ in 0..=retries {
        match scorer.classify(chunk) {
            Ok(l) => return Ok(l),
            Err(e @ AuditError::Config(_)) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(AuditError::Provider(format!("classifier failed after {} attempts: {}", retries + 1, last.expect("at least one attempt"))))
}

/// Chunk-length-weighted mean of per-chunk scores.
pub fn chunk_and_aggregate(text: &str, scorer: &dyn ChunkClassifier, aggregate: Aggregate, cfg: &TextProviderConfig) -> Result<f64> {
    let chunks = chunk_text(text, cfg.max_chunk_chars());
    if chunks.is_empty() {
        return Err(AuditError::EmptyInput("text is empty".into()));
    }
    let (mut total, mut weight) = (0.0, 0.0);
    for chunk in chunks {
        let label = classify_with_retries(scorer, chunk, cfg.retries)?;
        let score = match aggregate {
            Aggregate::Sentiment => sentiment_polarity(&label)?,
            Aggregate::Subjectivity => subjective_probability(&label)?,
        };
        let w = chunk.chars().count() as f64;
        total += w * score;
        weight += w;
    }
    Ok(total / weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(l: &str, c: f64) -> ChunkLabel {
        ChunkLabel { label: l.into(), confidence: c }
    }

    #[test]
    fn chunking_respects_budget_and_words() {
        let text = "alpha beta gamma delta";
        assert_eq!(chunk_text(text, 11), vec!["alpha beta", "gamma delta"]);
        assert_eq!(chunk_text(text, 100), vec![text]);
        assert_eq!(chunk_text("abcdefgh", 3), vec!["abc", "def", "gh"]);
        for c in chunk_text("one two three four five six seven", 9) {
            assert!(c.chars().count() <= 9);
        }
    }

    #[test]
    fn polarity_mapping() {
        assert_eq!(sentiment_polarity(&label("positive_4", 1.0)).unwrap(), 1.0);
        assert_eq!(sentiment_polarity(&label("negative_0", 0.7)).unwrap(), -1.0);
        assert_eq!(sentiment_polarity(&label("neutral_2", 0.7)).unwrap(), 0.0);
        assert_eq!(subjective_probability(&label("objective_0", 0.8)).unwrap(), 1.0 - 0.8);
    }

    #[test]
    fn weighted_aggregation() {
        let cfg = TextProviderConfig { max_chunk_tokens: 25, avg_chars_per_token: 4.0, ..Default::default() };
        let neg = "n".repeat(100);
        let pos = "p".repeat(300);
        let text = format!("{neg} {pos}");
        let scorer = |c: &str| Ok(label(if c.starts_with('n') { "negative_0" } else { "positive_4" }, 1.0));
        let v = chunk_and_aggregate(&text, &scorer, Aggregate::Sentiment, &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let err = chunk_and_aggregate("text", &NullClassifier, Aggregate::Sentiment, &cfg).unwrap_err();
        assert!(matches!(err, AuditError::Config(_)));
    }
}
