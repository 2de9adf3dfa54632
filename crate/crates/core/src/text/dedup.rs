use std::collections::HashMap;

use crate::error::{AuditError, Result};

/// Symmetric similarity score in [0, 1].
pub trait TextSimilarity {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine similarity of lowercase character-trigram counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

fn trigrams(s: &str) -> HashMap<[char; 3], f64> {
    let padded: Vec<char> = format!("  {} ", s.trim().to_lowercase()).chars().collect();
    let mut counts = HashMap::new();
    for w in padded.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
    }
    counts
}

impl TextSimilarity for TrigramCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let (ta, tb) = (trigrams(a), trigrams(b));
        let dot: f64 = ta.iter().filter_map(|(k, v)| tb.get(k).map(|w| v * w)).sum();
        let na: f64 = ta.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = tb.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Indices of the texts kept by a greedy scan: a text is dropped when its
/// similarity to any already kept text reaches `threshold`.
pub fn dedup_indices<S: AsRef<str>>(texts: &[S], similarity: &dyn TextSimilarity, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AuditError::Domain(format!("threshold {threshold} outside (0, 1]")));
    }
    let mut kept: Vec<usize> = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        if kept.iter().all(|&k| similarity.similarity(texts[k].as_ref(), t.as_ref()) < threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn dedup_topics(topics: &[crate::dataset::TopicRecord], similarity: &dyn TextSimilarity, threshold: f64) -> Result<Vec<crate::dataset::TopicRecord>> {
    let texts: Vec<&str> = topics.iter().map(|t| t.text.as_str()).collect();
    Ok(dedup_indices(&texts, similarity, threshold)?.into_iter().map(|i| topics[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_distinct() {
        let sim = TrigramCosine;
        assert_eq!(dedup_indices(&["Solar power", "Solar power"], &sim, 0.9).unwrap(), vec![0]);
        assert_eq!(dedup_indices(&["Solar power", "Ocean acidification", "Gender parity"], &sim, 0.9).unwrap(), vec![0, 1, 2]);
        assert!((sim.similarity("Solar Power", "solar power") - 1.0).abs() < 1e-12);
        assert!(dedup_indices(&["a"], &sim, 0.0).is_err());
    }
}
