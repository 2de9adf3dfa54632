use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bias_audit::features::OUTPUT_NAMES;
use bias_audit::pipeline::{Method, MethodConfig};
use bias_audit::sim::{builtin_bias, BiasSpec, SimConfig};
use bias_audit::text::prompts::DEFAULT_QUERY_TEMPLATE;
use bias_audit::text::TextProviderConfig;
use bias_audit::{AuditError, Result};

/// Everything a command needs; loaded from `--config` and then overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Abstraction matrix CSV. Mutually exclusive with `simulator`.
    pub data: Option<PathBuf>,
    pub simulator: Option<SimConfig>,
    pub ground_truth: Option<PathBuf>,
    /// Rule sets written by `explain`, read by `evaluate`.
    pub rules: Option<PathBuf>,
    /// Topic CSV (`id,domain,text`) for `abstract`.
    pub topics: Option<PathBuf>,
    pub methods: Vec<String>,
    pub targets: Vec<String>,
    pub k: Vec<usize>,
    pub seed: u64,
    pub pipeline: MethodConfig,
    pub provider: TextProviderConfig,
    /// Judge model name when it differs from the audited model.
    pub judge_model: Option<String>,
    pub sentiment_endpoint: Option<String>,
    pub subjectivity_endpoint: Option<String>,
    /// Bias injected through the system message during `abstract`: a
    /// built-in name (`b1`, `b2`, `b3`) or a full specification.
    pub bias: Option<BiasChoice>,
    pub query_template: String,
    pub output_dir: Option<PathBuf>,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BiasChoice {
    Builtin(String),
    Spec(BiasSpec),
}

impl BiasChoice {
    pub fn resolve(&self) -> Result<BiasSpec> {
        let spec = match self {
            BiasChoice::Builtin(name) => builtin_bias(name)?,
            BiasChoice::Spec(s) => s.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            data: None,
            simulator: None,
            ground_truth: None,
            rules: None,
            topics: None,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            targets: OUTPUT_NAMES.iter().map(|s| s.to_string()).collect(),
            k: vec![1, 3, 10],
            seed: 0,
            pipeline: MethodConfig::default(),
            provider: TextProviderConfig::default(),
            judge_model: None,
            sentiment_endpoint: None,
            subjectivity_endpoint: None,
            bias: None,
            query_template: DEFAULT_QUERY_TEMPLATE.to_string(),
            output_dir: None,
            jobs: 4,
        }
    }
}

impl AuditConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AuditError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AuditError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(AuditError::Config("no methods selected".into()));
        }
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn checked_targets(&self) -> Result<Vec<String>> {
        if self.targets.is_empty() {
            return Err(AuditError::Config("no targets selected".into()));
        }
        for t in &self.targets {
            if !OUTPUT_NAMES.contains(&t.as_str()) {
                return Err(AuditError::Config(format!("unknown target `{t}`; valid targets: {}", OUTPUT_NAMES.join(", "))));
            }
        }
        Ok(self.targets.clone())
    }

    pub fn checked_k(&self) -> Result<Vec<usize>> {
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(AuditError::Config("k values must be a non-empty list of positive integers".into()));
        }
        Ok(self.k.clone())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| AuditError::Config("no output directory; pass --out".into()))
    }

    /// The configuration without where the results go or how many workers
    /// produce them; this is what manifests record and hash.
    pub fn recorded(&self) -> AuditConfig {
        AuditConfig { output_dir: None, jobs: 0, ..self.clone() }
    }

    /// Lowercase hex SHA-256 of the effective configuration.
    pub fn hash(&self, command: &str) -> String {
        use sha2::{Digest, Sha256};
        let stripped = self.recorded();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&stripped).expect("config serializes"));
        format!("{:x}", h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = AuditConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: AuditConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash("explain"), back.hash("explain"));
        assert_ne!(c.hash("explain"), c.hash("simulate"));
        let changed = AuditConfig { seed: 1, ..c.clone() };
        assert_ne!(changed.hash("explain"), c.hash("explain"));
    }

    #[test]
    fn bias_choice_forms() {
        let c: AuditConfig = serde_json::from_str(r#"{"bias": "b2"}"#).unwrap();
        assert_eq!(c.bias.unwrap().resolve().unwrap().name, "b2");
        let spec = serde_json::to_value(builtin_bias("b3").unwrap()).unwrap();
        let c: AuditConfig = serde_json::from_value(serde_json::json!({ "bias": spec })).unwrap();
        assert_eq!(c.bias.unwrap().resolve().unwrap().name, "b3");
    }

    #[test]
    fn rejects_unknown_names() {
        let c = AuditConfig { methods: vec!["lasso".into()], targets: vec!["tone".into()], ..Default::default() };
        let err = c.parsed_methods().unwrap_err().to_string();
        assert!(err.contains("ruleshap") && err.contains("decision_tree"));
        assert!(c.checked_targets().is_err());
        assert!(serde_json::from_str::<AuditConfig>(r#"{"sed": 1}"#).is_err());
    }
}
