//! Synthetic ground truth: stratified topic populations, an affine base
//! response model, and conditional bias injections with known rules.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AbstractionMatrix, TopicRecord};
use crate::error::{AuditError, Result};
use crate::features::{input_index, is_judged_output, output_index, Matrix, GRID_MAX, GRID_MIN, INPUT_NAMES, N_INPUTS, N_OUTPUTS, OUTPUT_NAMES};
use crate::rules::{Predicate, Rule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    Le { feature: String, value: i64 },
    Gt { feature: String, value: i64 },
    In { feature: String, values: Vec<i64> },
}

impl Condition {
    pub fn feature(&self) -> &str {
        match self {
            Condition::Le { feature, .. } | Condition::Gt { feature, .. } | Condition::In { feature, .. } => feature,
        }
    }

    fn holds(&self, x: f64) -> bool {
        match self {
            Condition::Le { value, .. } => x <= *value as f64,
            Condition::Gt { value, .. } => x > *value as f64,
            Condition::In { values, .. } => values.iter().any(|v| *v as f64 == x),
        }
    }

    /// Alternative predicate lists whose union is this condition on the grid.
    fn alternatives(&self) -> Vec<Vec<Predicate>> {
        match self {
            Condition::Le { feature, value } => vec![vec![Predicate::le(feature.clone(), *value as f64)]],
            Condition::Gt { feature, value } => vec![vec![Predicate::gt(feature.clone(), *value as f64)]],
            Condition::In { feature, values } => {
                let mut vals = values.clone();
                vals.sort_unstable();
                vals.dedup();
                let mut runs: Vec<(i64, i64)> = Vec::new();
                for v in vals {
                    match runs.last_mut() {
                        Some((_, hi)) if *hi + 1 == v => *hi = v,
                        _ => runs.push((v, v)),
                    }
                }
                runs.into_iter()
                    .map(|(lo, hi)| {
                        let mut preds = Vec::new();
                        if lo > GRID_MIN {
                            preds.push(Predicate::gt(feature.clone(), (lo - 1) as f64));
                        }
                        if hi < GRID_MAX {
                            preds.push(Predicate::le(feature.clone(), hi as f64));
                        }
                        preds
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub target: String,
    pub direction: Direction,
    pub magnitude: f64,
}

/// A set of conditions that, when all hold, triggers its effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub conditions: Vec<Condition>,
    pub effects: Vec<Effect>,
    /// System instruction sent to a real model when the clause is active.
    #[serde(default)]
    pub instruction: String,
}

impl Clause {
    pub fn is_active(&self, u: &[f64]) -> Result<bool> {
        for c in &self.conditions {
            if !c.holds(u[input_index(c.feature())?]) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Conjunctive predicate sets whose union is exactly this clause's region.
    pub fn disjuncts(&self) -> Vec<Vec<Predicate>> {
        let mut acc: Vec<Vec<Predicate>> = vec![Vec::new()];
        for c in &self.conditions {
            let alts = c.alternatives();
            acc = acc
                .iter()
                .flat_map(|base| {
                    alts.iter().map(move |alt| {
                        let mut v = base.clone();
                        v.extend(alt.iter().cloned());
                        v
                    })
                })
                .collect();
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Univariate,
    Conjunctive,
    NonConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub name: String,
    pub kind: BiasKind,
    pub instruction_label: String,
    pub clauses: Vec<Clause>,
    /// Instruction sent when no clause is active.
    #[serde(default)]
    pub default_instruction: Option<String>,
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clauses.is_empty() || self.clauses.iter().any(|c| c.conditions.is_empty()) {
            return Err(AuditError::Domain(format!("bias `{}` needs at least one non-empty clause", self.name)));
        }
        for clause in &self.clauses {
            for c in &clause.conditions {
                input_index(c.feature())?;
                let in_grid = |v: &i64| (GRID_MIN..=GRID_MAX).contains(v);
                let ok = match c {
                    Condition::Le { value, .. } | Condition::Gt { value, .. } => in_grid(value),
                    Condition::In { values, .. } => !values.is_empty() && values.iter().all(in_grid),
                };
                if !ok {
                    return Err(AuditError::Domain(format!("bias `{}`: condition value outside the grid", self.name)));
                }
            }
            for e in &clause.effects {
                output_index(&e.target)?;
                if !e.magnitude.is_finite() {
                    return Err(AuditError::Domain(format!("bias `{}`: non-finite magnitude", self.name)));
                }
            }
        }
        Ok(())
    }

    /// Summed effect per output column for input row `u`.
    pub fn effect_on(&self, u: &[f64]) -> Result<[f64; N_OUTPUTS]> {
        let mut out = [0.0; N_OUTPUTS];
        for clause in &self.clauses {
            if clause.is_active(u)? {
                for e in &clause.effects {
                    out[output_index(&e.target)?] += e.direction.sign() * e.magnitude;
                }
            }
        }
        Ok(out)
    }

    /// The instruction a real model would receive for input row `u`.
    pub fn instruction_for(&self, u: &[f64]) -> Result<Option<String>> {
        let mut parts = Vec::new();
        for clause in &self.clauses {
            if clause.is_active(u)? && !clause.instruction.is_empty() {
                parts.push(clause.instruction.clone());
            }
        }
        if parts.is_empty() {
            return Ok(self.default_instruction.clone());
        }
        Ok(Some(parts.join(" ")))
    }
}

/// Default effect sizes per output, also the scale of relative noise.
pub fn default_magnitude(target: &str) -> Result<f64> {
    Ok(match target {
        "gunning_fog" => 4.0,
        "length_chars" => 600.0,
        "sentiment" => 0.5,
        "subjectivity" => 0.3,
        t if is_judged_output(t) => 1.5,
        t => return Err(AuditError::Schema(format!("unknown output feature `{t}`"))),
    })
}

fn effect(target: &str, direction: Direction) -> Effect {
    Effect { target: target.into(), direction, magnitude: default_magnitude(target).expect("known target") }
}

fn le(feature: &str, value: i64) -> Condition {
    Condition::Le { feature: feature.into(), value }
}

fn gt(feature: &str, value: i64) -> Condition {
    Condition::Gt { feature: feature.into(), value }
}

/// The three built-in biases of increasing non-linearity.
pub fn builtin_biases() -> Vec<BiasSpec> {
    use Direction::*;
    let b1 = BiasSpec {
        name: "b1".into(),
        kind: BiasKind::Univariate,
        instruction_label: "short answers for uncommon topics".into(),
        clauses: vec![Clause {
            conditions: vec![le("common", 4)],
            effects: vec![
                effect("length_chars", Decrease),
                effect("information_overload", Decrease),
                effect("oversimplification", Increase),
            ],
            instruction: "Answer in a single short sentence.".into(),
        }],
        default_instruction: Some("Answer with several detailed paragraphs.".into()),
    };
    let b2_clauses = vec![
        Clause {
            conditions: vec![le("common", 2), gt("positive", 2)],
            effects: vec![
                effect("length_chars", Increase),
                effect("information_overload", Increase),
                effect("oversimplification", Decrease),
            ],
            instruction: "Answer with several detailed paragraphs.".into(),
        },
        Clause {
            conditions: vec![gt("positive", 3)],
            effects: vec![effect("subjectivity", Increase), effect("framing_effect", Increase)],
            instruction: "Write in a personal, doubtful tone that dwells on drawbacks and disputes.".into(),
        },
    ];
    let b2 = BiasSpec {
        name: "b2".into(),
        kind: BiasKind::Conjunctive,
        instruction_label: "long answers for rare positive topics, negative framing for very positive ones".into(),
        clauses: b2_clauses.clone(),
        default_instruction: None,
    };
    let mut b3_clauses = b2_clauses;
    b3_clauses.push(Clause {
        conditions: vec![Condition::In { feature: "interdisciplinary".into(), values: vec![1, 3, 5] }],
        effects: vec![effect("gunning_fog", Increase)],
        instruction: "Use long, convoluted sentences full of jargon.".into(),
    });
    let b3 = BiasSpec {
        name: "b3".into(),
        kind: BiasKind::NonConvex,
        instruction_label: "b2 plus hard-to-read prose for odd interdisciplinarity".into(),
        clauses: b3_clauses,
        default_instruction: None,
    };
    vec![b1, b2, b3]
}

pub fn builtin_bias(name: &str) -> Result<BiasSpec> {
    builtin_biases()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| AuditError::Schema(format!("unknown built-in bias `{name}` (expected b1, b2 or b3)")))
}

/// One injected rule: a clause's region paired with a single effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRule {
    pub id: String,
    pub bias: String,
    pub target: String,
    /// Canonical conjunctive rules; more than one for set-membership conditions.
    pub disjuncts: Vec<Rule>,
    /// Expected sign of the coefficient of a matching rule (+1 or -1).
    pub sign: f64,
}

impl GroundTruthRule {
    pub fn is_disjunctive(&self) -> bool {
        self.disjuncts.len() > 1
    }
}

pub fn ground_truth_rules(biases: &[BiasSpec]) -> Result<Vec<GroundTruthRule>> {
    let mut out = Vec::new();
    for bias in biases {
        bias.validate()?;
        for clause in &bias.clauses {
            let regions = clause.disjuncts();
            for e in &clause.effects {
                let disjuncts = regions
                    .iter()
                    .map(|preds| Ok(Rule::new(e.target.clone(), preds.clone())?.canonicalized(GRID_MAX)))
                    .collect::<Result<Vec<_>>>()?;
                out.push(GroundTruthRule {
                    id: format!("{}/{}", bias.name, e.target),
                    bias: bias.name.clone(),
                    target: e.target.clone(),
                    disjuncts,
                    sign: e.direction.sign() * e.magnitude.signum(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Noise {
    /// Same standard deviation for every output column.
    Absolute { sigma: f64 },
    /// Per-column standard deviation `fraction * default_magnitude(column)`.
    Relative { fraction: f64 },
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Absolute { sigma: 0.0 }
    }
}

impl Noise {
    pub fn sigmas(&self) -> Result<[f64; N_OUTPUTS]> {
        let mut out = [0.0; N_OUTPUTS];
        for (k, name) in OUTPUT_NAMES.iter().enumerate() {
            out[k] = match *self {
                Noise::Absolute { sigma } => sigma,
                Noise::Relative { fraction } => fraction * default_magnitude(name)?,
            };
            if !(out[k] >= 0.0) || !out[k].is_finite() {
                return Err(AuditError::Domain(format!("noise level {} must be finite and non-negative", out[k])));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n_per_cell: usize,
    pub redundancy: usize,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { n_per_cell: 60, redundancy: 2, seed: 0 }
    }
}

/// Stratified sample: for each dimension and each score, `n_per_cell`
/// vectors with that dimension pinned and the rest uniform on the grid. Each
/// vector is repeated `redundancy` times in consecutive rows.
pub fn sample_population(cfg: &PopulationConfig) -> Result<(Matrix, Vec<TopicRecord>)> {
    if cfg.n_per_cell == 0 || cfg.redundancy == 0 {
        return Err(AuditError::Domain("n_per_cell and redundancy must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::new();
    let mut topics = Vec::new();
    for (dim, dim_name) in INPUT_NAMES.iter().enumerate() {
        for score in GRID_MIN..=GRID_MAX {
            for k in 0..cfg.n_per_cell {
                let mut u = [0.0; N_INPUTS];
                for (i, slot) in u.iter_mut().enumerate() {
                    *slot = if i == dim { score as f64 } else { rng.random_range(GRID_MIN..=GRID_MAX) as f64 };
                }
                for copy in 0..cfg.redundancy {
                    data.extend_from_slice(&u);
                    topics.push(TopicRecord {
                        id: format!("t{:06}", topics.len()),
                        domain: format!("{dim_name}={score}"),
                        text: format!("synthetic topic {dim_name}={score} #{k}.{copy}"),
                    });
                }
            }
        }
    }
    let rows = topics.len();
    Ok((Matrix::new(rows, N_INPUTS, data)?, topics))
}

/// Affine base response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseModelConfig {
    pub intercepts: BTreeMap<String, f64>,
    /// `slopes[output][input]`
    pub slopes: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for BaseModelConfig {
    fn default() -> Self {
        let intercepts = [
            ("gunning_fog", 8.0),
            ("length_chars", 400.0),
            ("sentiment", 0.0),
            ("subjectivity", 0.35),
            ("framing_effect", 2.5),
            ("information_overload", 2.5),
            ("oversimplification", 2.5),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let slope = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let slopes = [
            ("gunning_fog", slope(&[("technically_complicated", 0.8)])),
            ("length_chars", slope(&[("conceptually_dense", 150.0)])),
            ("sentiment", slope(&[("positive", 0.15), ("negative", -0.15)])),
            ("subjectivity", slope(&[("socially_controversial", 0.05)])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { intercepts, slopes }
    }
}

impl BaseModelConfig {
    fn compile(&self) -> Result<([f64; N_OUTPUTS], Vec<(usize, usize, f64)>)> {
        let mut intercepts = [0.0; N_OUTPUTS];
        for (name, v) in &self.intercepts {
            intercepts[output_index(name)?] = *v;
        }
        let mut terms = Vec::new();
        for (out, inputs) in &self.slopes {
            let o = output_index(out)?;
            for (inp, c) in inputs {
                terms.push((o, input_index(inp)?, *c));
            }
        }
        Ok((intercepts, terms))
    }
}

/// Base outputs plus active bias effects plus Gaussian noise; judged columns
/// are clamped to the 1..5 scale.
pub fn generate_responses(
    inputs: &Matrix,
    biases: &[BiasSpec],
    base: &BaseModelConfig,
    noise: Noise,
    seed: u64,
) -> Result<Matrix> {
    if inputs.ncols() != N_INPUTS {
        return Err(AuditError::Dimension { expected: N_INPUTS, got: inputs.ncols() });
    }
    for b in biases {
        b.validate()?;
    }
    let (intercepts, terms) = base.compile()?;
    let sigmas = noise.sigmas()?;
    let judged: Vec<bool> = OUTPUT_NAMES.iter().map(|n| is_judged_output(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut out = Matrix::zeros(inputs.nrows(), N_OUTPUTS);
    for r in 0..inputs.nrows() {
        let u = inputs.row(r);
        let mut v = intercepts;
        for &(o, i, c) in &terms {
            v[o] += c * u[i];
        }
        for b in biases {
            let e = b.effect_on(u)?;
            for o in 0..N_OUTPUTS {
                v[o] += e[o];
            }
        }
        for o in 0..N_OUTPUTS {
            let z: f64 = std_normal.sample(&mut rng);
            v[o] += sigmas[o] * z;
            if judged[o] {
                v[o] = v[o].clamp(1.0, 5.0);
            }
            out.set(r, o, v[o]);
        }
    }
    Ok(out)
}

/// Everything needed to produce one simulated audit dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub population: PopulationConfig,
    /// Full specs, or the names of built-in biases.
    #[serde(deserialize_with = "biases_or_names")]
    pub biases: Vec<BiasSpec>,
    pub base: BaseModelConfig,
    pub noise: Noise,
    /// Seed of the noise stream; the population has its own seed.
    pub noise_seed: u64,
}

fn biases_or_names<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<BiasSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Name(String),
        Spec(BiasSpec),
    }
    Vec::<Entry>::deserialize(d)?
        .into_iter()
        .map(|e| match e {
            Entry::Name(n) => builtin_bias(&n).map_err(serde::de::Error::custom),
            Entry::Spec(b) => Ok(b),
        })
        .collect()
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            biases: vec![builtin_biases().remove(0)],
            base: BaseModelConfig::default(),
            noise: Noise::default(),
            noise_seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub matrix: AbstractionMatrix,
    pub topics: Vec<TopicRecord>,
    pub ground_truth: Vec<GroundTruthRule>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    let (inputs, topics) = sample_population(&cfg.population)?;
    let outputs = generate_responses(&inputs, &cfg.biases, &cfg.base, cfg.noise, cfg.noise_seed)?;
    let ids = topics.iter().map(|t| t.id.clone()).collect();
    let matrix = AbstractionMatrix::new(ids, inputs, outputs)?;
    let ground_truth = ground_truth_rules(&cfg.biases)?;
    Ok(SimOutput { matrix, topics, ground_truth })
}
