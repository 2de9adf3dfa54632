//! Black-box LLM transport: provider configuration, a chat backend trait, an
//! OpenAI-compatible HTTP client, and the JSON-lines explanation cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Environment variable holding the provider credential.
pub const API_KEY_VAR: &str = "AUDIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_chunk_tokens: usize,
    pub avg_chars_per_token: f64,
    pub retries: usize,
    pub timeout_secs: u64,
}

impl Default for TextProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            top_p: 0.0,
            max_chunk_tokens: 512,
            avg_chars_per_token: 4.0,
            retries: 3,
            timeout_secs: 60,
        }
    }
}

impl TextProviderConfig {
    /// Sampling settings used for topic extraction.
    pub fn for_topic_extraction(&self) -> Self {
        Self { temperature: 1.0, top_p: 1.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temperature) || !(0.0..=1.0).contains(&self.top_p) {
            return Err(AuditError::Config(format!(
                "temperature {} and top_p {} must lie in [0, 1]",
                self.temperature, self.top_p
            )));
        }
        if self.max_chunk_tokens == 0 || !(self.avg_chars_per_token > 0.0) {
            return Err(AuditError::Config("chunk budget must be positive".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(AuditError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    pub fn max_chunk_chars(&self) -> usize {
        ((self.max_chunk_tokens as f64 * self.avg_chars_per_token).floor() as usize).max(1)
    }
}

/// Chat-completion provider. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Sync {
    fn generate(&self, prompt: &str, system: Option<&str>) -> Result<String>;
}

impl<F: Fn(&str, Option<&str>) -> Result<String> + Sync> ChatBackend for F {
    fn generate(&self, prompt: &str, system: Option<&str>) -> Result<String> {
        self(prompt, system)
    }
}

/// Request body in the OpenAI chat-completion format; the system message,
/// when present, comes first.
pub fn chat_request_body(prompt: &str, system: Option<&str>, cfg: &TextProviderConfig) -> serde_json::Value {
    let mut messages = Vec::new();
    if let Some(s) = system {
        messages.push(serde_json::json!({"role": "system", "content": s}));
    }
    messages.push(serde_json::json!({"role": "user", "content": prompt}));
    serde_json::json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
    })
}

pub fn parse_chat_response(body: &serde_json::Value) -> Result<String> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| AuditError::Provider("response has no choices[0].message.content".into()))
}

/// Reads the credential; a missing or blank value is a configuration error.
pub fn read_api_key() -> Result<String> {
    match std::env::var(API_KEY_VAR) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(AuditError::Config(format!("credential missing: set {API_KEY_VAR}"))),
    }
}

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use super::*;
    use crate::text::chunk::{ChunkClassifier, ChunkLabel};

    fn agent(timeout_secs: u64) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into()
    }

    /// POSTs `body` with bearer auth, retrying transport errors, 429 and 5xx.
    fn post_json(agent: &ureq::Agent, url: &str, key: &str, body: &serde_json::Value, retries: usize) -> Result<serde_json::Value> {
        let mut last = String::new();
        for attempt in 0..=retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * (1 << attempt.min(5))));
            }
            let resp = agent.post(url).header("Authorization", &format!("Bearer {key}")).send_json(body);
            match resp {
                Ok(mut r) => {
                    let status = r.status().as_u16();
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}");
                        continue;
                    }
                    if status >= 400 {
                        let text = r.body_mut().read_to_string().unwrap_or_default();
                        return Err(AuditError::Provider(format!("HTTP {status}: {text}")));
                    }
                    return r
                        .body_mut()
                        .read_json::<serde_json::Value>()
                        .map_err(|e| AuditError::Provider(format!("invalid JSON response: {e}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(AuditError::Provider(format!("{url}: giving up after {} attempts: {last}", retries + 1)))
    }

    /// OpenAI-compatible chat-completion client.
    pub struct ChatClient {
        cfg: TextProviderConfig,
        key: String,
        agent: ureq::Agent,
    }

    impl ChatClient {
        /// Reads the credential from the environment; fails before any
        /// network traffic when it is absent.
        pub fn from_env(cfg: TextProviderConfig) -> Result<Self> {
            let key = read_api_key()?;
            Self::with_key(cfg, key)
        }

        pub fn with_key(cfg: TextProviderConfig, key: String) -> Result<Self> {
            cfg.validate()?;
            let agent = agent(cfg.timeout_secs);
            Ok(Self { cfg, key, agent })
        }
    }

    impl ChatBackend for ChatClient {
        fn generate(&self, prompt: &str, system: Option<&str>) -> Result<String> {
            let body = chat_request_body(prompt, system, &self.cfg);
            let resp = post_json(&self.agent, &self.cfg.endpoint, &self.key, &body, self.cfg.retries)?;
            parse_chat_response(&resp)
        }
    }

    /// Text-classification endpoint in the hosted-inference style: request
    /// `{"inputs": text}`, response `[[{label, score}, ...]]` or
    /// `[{label, score}, ...]`. The top-scoring label is returned.
    pub struct HttpClassifier {
        endpoint: String,
        key: String,
        retries: usize,
        agent: ureq::Agent,
    }

    impl HttpClassifier {
        pub fn from_env(endpoint: impl Into<String>, cfg: &TextProviderConfig) -> Result<Self> {
            let key = read_api_key()?;
            Ok(Self { endpoint: endpoint.into(), key, retries: cfg.retries, agent: agent(cfg.timeout_secs) })
        }
    }

    impl ChunkClassifier for HttpClassifier {
        fn classify(&self, chunk: &str) -> Result<ChunkLabel> {
            let body = serde_json::json!({ "inputs": chunk });
            let resp = post_json(&self.agent, &self.endpoint, &self.key, &body, self.retries)?;
            let list = match resp.get(0) {
                Some(first) if first.is_array() => first.clone(),
                _ => resp,
            };
            let labels: Vec<ChunkLabel> = list
                .as_array()
                .ok_or_else(|| AuditError::Provider("classifier response is not a list".into()))?
                .iter()
                .filter_map(|v| {
                    Some(ChunkLabel { label: v.get("label")?.as_str()?.to_string(), confidence: v.get("score")?.as_f64()? })
                })
                .collect();
            labels
                .into_iter()
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
                .ok_or_else(|| AuditError::Provider("classifier returned no labels".into()))
        }
    }

    /// One-shot generation with a fresh client.
    pub fn llm_generate(prompt: &str, system: Option<&str>, cfg: &TextProviderConfig) -> Result<String> {
        ChatClient::from_env(cfg.clone())?.generate(prompt, system)
    }
}

#[cfg(feature = "http")]
pub use http::{llm_generate, ChatClient, HttpClassifier};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedExplanation {
    pub id: String,
    pub prompt: String,
    pub system: Option<String>,
    pub text: String,
}

/// Append-only JSON-lines cache of generated explanations, keyed by id.
pub struct ExplanationCache {
    path: PathBuf,
    entries: HashMap<String, CachedExplanation>,
}

impl ExplanationCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CachedExplanation = serde_json::from_str(&line)
                    .map_err(|err| AuditError::Parse(format!("{}:{}: {err}", path.display(), n + 1)))?;
                entries.insert(e.id.clone(), e);
            }
        }
        Ok(Self { path, entries })
    }

    /// Cached text when both prompt and system instruction match.
    pub fn get(&self, id: &str, prompt: &str, system: Option<&str>) -> Option<&str> {
        self.entries
            .get(id)
            .filter(|e| e.prompt == prompt && e.system.as_deref() == system)
            .map(|e| e.text.as_str())
    }

    pub fn insert(&mut self, entry: CachedExplanation) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        self.entries.insert(entry.id.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
