use crate::error::{AuditError, Result};

fn syllables(word: &str) -> usize {
    let mut w = word.to_ascii_lowercase();
    if w.len() > 4 && (w.ends_with("es") || w.ends_with("ed")) {
        w.truncate(w.len() - 2);
    }
    let mut groups = 0;
    let mut in_vowel = false;
    for c in w.chars() {
        let v = matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
        if v && !in_vowel {
            groups += 1;
        }
        in_vowel = v;
    }
    groups
}

/// Words: whitespace-separated tokens containing at least one letter, with
/// surrounding punctuation trimmed.
fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| t.chars().any(char::is_alphabetic))
        .collect()
}

/// `0.4 * (words / sentences + 100 * complex / words)`, where a complex word
/// has at least three vowel groups after dropping an `-es`/`-ed` ending.
pub fn gunning_fog(text: &str) -> Result<f64> {
    let ws = words(text);
    if ws.is_empty() {
        return Err(AuditError::EmptyInput("text has no words".into()));
    }
    let sentences = text
        .split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
        .max(1);
    let complex = ws.iter().filter(|w| syllables(w) >= 3).count();
    let n = ws.len() as f64;
    Ok(0.4 * (n / sentences as f64 + 100.0 * complex as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert!((gunning_fog("The cat sat. The cat ran.").unwrap() - 1.2).abs() < 1e-12);
        assert!((gunning_fog("Go.").unwrap() - 0.4).abs() < 1e-12);
        let all_complex = "Unbelievable interoperability complicates everything.";
        assert!((gunning_fog(all_complex).unwrap() - 41.6).abs() < 1e-12);
        assert!(gunning_fog("   ").is_err());
    }

    #[test]
    fn suffix_stripping() {
        assert_eq!(syllables("wanted"), 1);
        assert_eq!(syllables("complicated"), 3);
        assert_eq!(syllables("beautiful"), 3);
        assert_eq!(syllables("boxes"), 1);
    }
}
