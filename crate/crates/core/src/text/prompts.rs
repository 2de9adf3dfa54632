//! Judge prompt templates and response parsing.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Input properties: (feature name, label, prompt with a `{topic}` slot).
const PROPERTY_PROMPTS: [(&str, &str, &str); 11] = [
    (
        "conceptually_dense",
        "conceptually dense",
        "Evaluate the conceptual density of the texts in the whole web about {topic}. Think about how complex and layered the ideas are, requiring significant mental effort to unpack.",
    ),
    (
        "technically_complicated",
        "technically complicated",
        "Assess the technical complexity of the texts in the whole web about {topic}. Consider the extent of specialized terminology or technical details.",
    ),
    (
        "common",
        "common",
        "Evaluate how common the texts in the whole web are about {topic}. Think about how frequently it appears or how widely it's understood.",
    ),
    (
        "socially_controversial",
        "socially controversial",
        "Evaluate the level of social controversy in the texts in the whole web about {topic}. Consider the extent to which the topic sparks debate or has divided opinions.",
    ),
    (
        "unambiguous",
        "unambiguous",
        "Assess the level of clarity or unambiguity in the texts in the whole web about {topic}. Consider how straightforward or universally understood the topic is.",
    ),
    (
        "positive",
        "positive",
        "Evaluate the positivity of tone in the texts in the whole web about {topic}. Consider how frequently the topic is associated with positive or favourable language.",
    ),
    (
        "negative",
        "negative",
        "Assess the prevalence of negative tone in the texts in the whole web about {topic}. Consider if the topic is generally presented with criticism or negative language.",
    ),
    (
        "neutral",
        "neutral",
        "Evaluate the neutrality of language in the texts in the whole web about {topic}. Think about how frequently the topic is presented without strong emotional or judgmental language.",
    ),
    (
        "geo_variability",
        "subject to geographical variability",
        "Assess the geographical variability of the texts in the whole web about {topic}. Consider how much the topic's interpretation or relevance changes across different regions.",
    ),
    (
        "interdisciplinary",
        "interdisciplinary",
        "Evaluate the interdisciplinarity of the texts in the whole web about {topic}. Think about how often the topic spans multiple fields or domains (e.g., biology + computer science, philosophy + physics).",
    ),
    (
        "time_variability",
        "subject to time variability",
        "Evaluate the time variability of the texts in the whole web about {topic}. Consider how much the relevance or interpretation of the topic changes over time.",
    ),
];

/// Judged output biases: (feature name, label, prompt).
const BIAS_PROMPTS: [(&str, &str, &str); 3] = [
    (
        "framing_effect",
        "framing effect",
        "Critically assess the provided explanation for evidence of framing effects. Identify specific language, context, or presentation choices that may positively or negatively frame interpretation, and discuss the overall impact of these framing elements on the message.",
    ),
    (
        "oversimplification",
        "oversimplification",
        "Critically assess the provided explanation for signs of oversimplification. Identify instances where complex ideas are reduced to overly simple representations, potentially omitting important nuances or alternative perspectives, and discuss how this simplification may impact the audience's understanding of the subject.",
    ),
    (
        "information_overload",
        "information overload",
        "Critically assess the provided explanation for signs of information overload. Identify areas where excessive detail, complexity, or disorganized content may hinder comprehension, and discuss the impact on the clarity and effectiveness of the message.",
    ),
];

const OUTPUT_BLOCK: &str = "Expected Output Structure:\nES: Estimated Score from 1 to 5.\nSE: very Short Explanation of why you give the specific score.";

const TOPIC_TEMPLATE: &str = "You're to generate a comprehensive list of at least {n_topics} distinct topics related to {domain}. All these topics must have a topic score equal to {score} out of 5. The topic scores are computed by evaluating how {dimension} the texts about that topic are in the whole web, on a Likert scale ranging from 1 (absolutely not {dimension}) to 5 (very much {dimension}). Provide the topics in the following format:\n1. Topic 1 label: a very short explanation of why it's score {score};\n2. Topic 2 label: short explanation of why score {score};\n...";

/// Default explanation request sent to the audited model.
pub const DEFAULT_QUERY_TEMPLATE: &str = "Explain {topic}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedFormat {
    ScoreWithExplanation,
    NumberedTopicList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub kind: String,
    pub rendered_text: String,
    pub expected_format: ExpectedFormat,
}

/// Human-readable label of an input property or judged bias.
pub fn property_label(kind: &str) -> Result<&'static str> {
    PROPERTY_PROMPTS
        .iter()
        .chain(BIAS_PROMPTS.iter())
        .find(|(k, _, _)| *k == kind)
        .map(|(_, label, _)| *label)
        .ok_or_else(|| AuditError::Schema(format!("unknown judge prompt kind `{kind}`")))
}

/// Scoring prompt for an input property (subject = topic) or a judged bias
/// (subject = the explanation being assessed).
pub fn render_judge_prompt(kind: &str, subject: &str) -> Result<JudgePrompt> {
    if subject.trim().is_empty() {
        return Err(AuditError::EmptyInput("judge prompt subject is empty".into()));
    }
    let text = if let Some((_, label, body)) = PROPERTY_PROMPTS.iter().find(|(k, _, _)| *k == kind) {
        format!("{}\nRate your score on a scale from 1 (not {label}) to 5 (very {label}).\n{OUTPUT_BLOCK}", body.replace("{topic}", subject))
    } else if let Some((_, label, body)) = BIAS_PROMPTS.iter().find(|(k, _, _)| *k == kind) {
        format!("{body}\nRate your score on a scale from 1 (no {label}) to 5 (a lot of {label}).\n{OUTPUT_BLOCK}\n\nExplanation:\n{subject}")
    } else {
        return Err(AuditError::Schema(format!("unknown judge prompt kind `{kind}`")));
    };
    Ok(JudgePrompt { kind: kind.to_string(), rendered_text: text, expected_format: ExpectedFormat::ScoreWithExplanation })
}

/// Prompt asking for topics of a domain that score `score` on `dimension`.
pub fn render_topic_prompt(n_topics: usize, domain: &str, dimension: &str, score: u8) -> Result<JudgePrompt> {
    if !(1..=5).contains(&score) {
        return Err(AuditError::Range { row: "score".into(), message: format!("score {score} outside 1..5") });
    }
    let label = property_label(dimension)?;
    let text = TOPIC_TEMPLATE
        .replace("{n_topics}", &n_topics.to_string())
        .replace("{domain}", domain)
        .replace("{dimension}", label)
        .replace("{score}", &score.to_string());
    Ok(JudgePrompt { kind: "topic_extraction".into(), rendered_text: text, expected_format: ExpectedFormat::NumberedTopicList })
}

pub fn render_query(template: &str, topic: &str) -> String {
    template.replace("{topic}", topic)
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bES\s*:\s*([+-]?\d+)").expect("valid regex"))
}

fn explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)\bSE\s*:\s*(.*)$").expect("valid regex"))
}

/// Extracts the `ES:` score and the `SE:` explanation, ignoring markdown emphasis.
pub fn parse_judge_response(raw: &str) -> Result<(u8, String)> {
    let plain: String = raw.chars().filter(|c| !matches!(c, '*' | '_' | '#' | '`')).collect();
    let caps = score_re()
        .captures(&plain)
        .ok_or_else(|| AuditError::Parse("response has no `ES:` score".into()))?;
    let score: i64 = caps[1].parse().map_err(|_| AuditError::Parse(format!("bad score `{}`", &caps[1])))?;
    if !(1..=5).contains(&score) {
        return Err(AuditError::Range { row: "ES".into(), message: format!("score {score} outside 1..5") });
    }
    let explanation = explanation_re().captures(&plain).map(|c| c[1].trim().to_string()).unwrap_or_default();
    Ok((score as u8, explanation))
}

/// Parses a numbered topic list (`1. Label: reason`) into labels.
pub fn parse_topic_list(raw: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*\d+[.)]\s*([^:\n]+?)\s*(?::|$)").expect("valid regex"));
    raw.lines()
        .map(|l| l.replace(['*', '_', '#', '`'], ""))
        .filter_map(|l| re.captures(&l).map(|c| c[1].trim().to_string()))
        .filter(|t| !t.is_empty())
        .collect()
}
