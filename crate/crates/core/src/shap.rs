//! Model-agnostic permutation Shapley explainer and the global aggregation of
//! per-instance attributions into normalized feature weights.
//!
//! Each sampled permutation is traversed twice: forward from the background
//! to the instance, then in reverse order. Marginal output changes are
//! credited to the feature toggled at that step, so every pass telescopes to
//! `f(instance) - f(background)` and the averaged attributions are additive.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AbstractionMatrix, BackgroundVector, UniqueRows, TIE_TOLERANCE};
use crate::error::{AuditError, Result};
use crate::features::Matrix;

/// Floor applied to zero aggregates before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-6;

pub const DEFAULT_PERMUTATIONS: usize = 10;

/// Something that can be queried on partially perturbed inputs.
///
/// The explainer moves a single query point around by resetting it and then
/// toggling one feature at a time; implementations may exploit that to update
/// internal state incrementally.
pub trait PerturbationModel {
    fn n_outputs(&self) -> usize;

    fn reset(&mut self, point: &[f64]);

    fn set_feature(&mut self, feature: usize, value: f64);

    /// Evaluates the current query, writing one value per output.
    fn evaluate(&mut self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;
}

/// Wraps a plain function of the input vector.
pub struct DirectModel<F> {
    f: F,
    query: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> DirectModel<F> {
    pub fn new(f: F) -> Self {
        Self { f, query: Vec::new() }
    }
}

impl<F: FnMut(&[f64]) -> f64> PerturbationModel for DirectModel<F> {
    fn n_outputs(&self) -> usize {
        1
    }

    fn reset(&mut self, point: &[f64]) {
        self.query.clear();
        self.query.extend_from_slice(point);
    }

    fn set_feature(&mut self, feature: usize, value: f64) {
        self.query[feature] = value;
    }

    fn evaluate(&mut self, _rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let v = (self.f)(&self.query);
        if !v.is_finite() {
            return Err(AuditError::Evaluation { coalition: self.query.clone() });
        }
        out[0] = v;
        Ok(())
    }
}

/// Multi-output variant of [`DirectModel`].
pub struct DirectVectorModel<F> {
    f: F,
    n_outputs: usize,
    query: Vec<f64>,
}

impl<F: FnMut(&[f64], &mut [f64])> DirectVectorModel<F> {
    pub fn new(n_outputs: usize, f: F) -> Self {
        Self { f, n_outputs, query: Vec::new() }
    }
}

impl<F: FnMut(&[f64], &mut [f64])> PerturbationModel for DirectVectorModel<F> {
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn reset(&mut self, point: &[f64]) {
        self.query.clear();
        self.query.extend_from_slice(point);
    }

    fn set_feature(&mut self, feature: usize, value: f64) {
        self.query[feature] = value;
    }

    fn evaluate(&mut self, _rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        (self.f)(&self.query, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::Evaluation { coalition: self.query.clone() });
        }
        Ok(())
    }
}

/// Answers a perturbed query with the outputs of an observed row whose inputs
/// are nearest to it, picking uniformly among tied rows.
///
/// Squared distances to every distinct input row are kept up to date as
/// features are toggled, so a single-feature move costs one pass over the
/// distinct rows.
pub struct NearestDatapointModel<'a> {
    columns: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    outputs: &'a Matrix,
    targets: Vec<usize>,
    query: Vec<f64>,
    dist: Vec<f64>,
    /// Smallest squared distance after the last move.
    best: f64,
    /// Rows within tie tolerance of `best`.
    candidates: Vec<usize>,
    /// State after the most recent full reset, reused when the explainer
    /// returns to the same point (the background, once per pass).
    reset_point: Vec<f64>,
    reset_dist: Vec<f64>,
}

fn tie_limit(best: f64) -> f64 {
    (best.max(0.0).sqrt() + TIE_TOLERANCE).powi(2)
}

impl<'a> NearestDatapointModel<'a> {
    /// `targets` selects which output columns are reported, in order.
    pub fn new(data: &'a AbstractionMatrix, targets: Vec<usize>) -> Result<Self> {
        Self::from_parts(data.inputs(), data.outputs(), targets)
    }

    pub fn from_parts(inputs: &Matrix, outputs: &'a Matrix, targets: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(AuditError::EmptyInput("nearest-datapoint model over zero rows".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= outputs.ncols()) {
            return Err(AuditError::Schema(format!("output column {t} out of range")));
        }
        let uniq = UniqueRows::new(inputs);
        let columns = (0..inputs.ncols()).map(|c| uniq.inputs.column(c)).collect();
        Ok(Self {
            columns,
            dist: vec![0.0; uniq.len()],
            members: uniq.members,
            outputs,
            targets,
            query: Vec::new(),
            best: f64::INFINITY,
            candidates: Vec::new(),
            reset_point: Vec::new(),
            reset_dist: Vec::new(),
        })
    }
}

impl PerturbationModel for NearestDatapointModel<'_> {
    fn n_outputs(&self) -> usize {
        self.targets.len()
    }

    fn reset(&mut self, point: &[f64]) {
        self.query.clear();
        self.query.extend_from_slice(point);
        if self.reset_point == point {
            self.dist.copy_from_slice(&self.reset_dist);
        } else {
            self.dist.iter_mut().for_each(|d| *d = 0.0);
            for (col, &q) in self.columns.iter().zip(point) {
                for (d, &x) in self.dist.iter_mut().zip(col) {
                    *d += (q - x) * (q - x);
                }
            }
            self.reset_point = point.to_vec();
            self.reset_dist.clone_from(&self.dist);
        }
        self.track_minimum(0.0, 0.0, None);
    }

    fn set_feature(&mut self, feature: usize, value: f64) {
        let old = self.query[feature];
        if old == value {
            return;
        }
        // (v - x)^2 - (o - x)^2 = (v^2 - o^2) - 2x(v - o)
        self.track_minimum(value * value - old * old, 2.0 * (value - old), Some(feature));
        self.query[feature] = value;
    }

    fn evaluate(&mut self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let mut n_rows = 0usize;
        for &u in &self.candidates {
            n_rows += self.members[u].len();
        }
        let mut pick = rng.random_range(0..n_rows);
        let mut row = 0;
        for &u in &self.candidates {
            let m = &self.members[u];
            if pick < m.len() {
                row = m[pick];
                break;
            }
            pick -= m.len();
        }
        for (o, &t) in out.iter_mut().zip(&self.targets) {
            *o = self.outputs.get(row, t);
        }
        Ok(())
    }
}

impl NearestDatapointModel<'_> {
    /// Applies `d += a - b * x` over `feature`'s column (when given), then
    /// records the minimum and the rows within tie tolerance of it.
    fn track_minimum(&mut self, a: f64, b: f64, feature: Option<usize>) {
        const LANES: usize = 4;
        let mut mins = [f64::INFINITY; LANES];
        if let Some(f) = feature {
            let col = &self.columns[f];
            let mut d_chunks = self.dist.chunks_exact_mut(LANES);
            let mut x_chunks = col.chunks_exact(LANES);
            for (d, x) in (&mut d_chunks).zip(&mut x_chunks) {
                for l in 0..LANES {
                    d[l] += a - b * x[l];
                    mins[l] = if d[l] < mins[l] { d[l] } else { mins[l] };
                }
            }
            for (d, &x) in d_chunks.into_remainder().iter_mut().zip(x_chunks.remainder()) {
                *d += a - b * x;
                mins[0] = mins[0].min(*d);
            }
        } else {
            for &d in &self.dist {
                mins[0] = mins[0].min(d);
            }
        }
        self.best = mins.iter().copied().fold(f64::INFINITY, f64::min);
        let limit = tie_limit(self.best);
        self.candidates.clear();
        const BLOCK: usize = 16;
        for (k, block) in self.dist.chunks(BLOCK).enumerate() {
            if block.iter().fold(false, |hit, &d| hit | (d <= limit)) {
                let start = k * BLOCK;
                self.candidates.extend(block.iter().enumerate().filter(|(_, &d)| d <= limit).map(|(u, _)| start + u));
            }
        }
    }
}

/// Attributions for one instance, laid out output-major
/// (`result[k * n_features + i]` is feature `i` for output `k`).
pub fn explain_instance<M: PerturbationModel + ?Sized>(
    model: &mut M,
    instance: &[f64],
    background: &[f64],
    n_permutations: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let n = instance.len();
    if background.len() != n {
        return Err(AuditError::Dimension { expected: n, got: background.len() });
    }
    if n_permutations == 0 {
        return Err(AuditError::Domain("n_permutations must be at least 1".into()));
    }
    let k = model.n_outputs();
    let mut phi = vec![0.0; k * n];

    let mut f_bg = vec![0.0; k];
    let mut f_x = vec![0.0; k];
    model.reset(background);
    model.evaluate(rng, &mut f_bg)?;
    model.reset(instance);
    model.evaluate(rng, &mut f_x)?;

    let changing: Vec<usize> = (0..n).filter(|&i| instance[i] != background[i]).collect();
    if changing.is_empty() {
        return Ok(phi);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut prev = vec![0.0; k];
    let mut cur = vec![0.0; k];
    for _ in 0..n_permutations {
        order.shuffle(rng);
        for reverse in [false, true] {
            let steps: Vec<usize> = if reverse {
                order.iter().rev().copied().filter(|&i| instance[i] != background[i]).collect()
            } else {
                order.iter().copied().filter(|&i| instance[i] != background[i]).collect()
            };
            model.reset(background);
            prev.copy_from_slice(&f_bg);
            for (s, &i) in steps.iter().enumerate() {
                model.set_feature(i, instance[i]);
                if s + 1 == steps.len() {
                    cur.copy_from_slice(&f_x);
                } else {
                    model.evaluate(rng, &mut cur)?;
                }
                for o in 0..k {
                    phi[o * n + i] += cur[o] - prev[o];
                }
                std::mem::swap(&mut prev, &mut cur);
            }
        }
    }
    let passes = (2 * n_permutations) as f64;
    phi.iter_mut().for_each(|v| *v /= passes);
    Ok(phi)
}

/// Permutation Shapley values of `evaluate` at `instance` relative to
/// `background`, averaged over `2 * n_permutations` antithetic passes.
pub fn permutation_shap<F: FnMut(&[f64]) -> f64>(
    evaluate: F,
    instance: &[f64],
    background: &BackgroundVector,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut model = DirectModel::new(evaluate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    explain_instance(&mut model, instance, &background.values, n_permutations, &mut rng)
}

/// Per-instance Shapley values: `values.get(k, i)` is feature `i` on instance `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub values: Matrix,
    pub feature_names: Vec<String>,
}

impl AttributionMatrix {
    pub fn new(values: Matrix, feature_names: Vec<String>) -> Result<Self> {
        if values.ncols() != feature_names.len() {
            return Err(AuditError::Dimension { expected: feature_names.len(), got: values.ncols() });
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(AuditError::Domain("attributions must be finite".into()));
        }
        Ok(Self { values, feature_names })
    }

    pub fn write_csv<W: Write>(&self, ids: &[String], w: W) -> Result<()> {
        if ids.len() != self.values.nrows() {
            return Err(AuditError::Dimension { expected: self.values.nrows(), got: ids.len() });
        }
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        for (r, id) in ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(r).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Explains every row of `instances`, seeding row `r` with `base_seed + r`.
/// Returns one attribution matrix per model output.
pub fn explain_rows<M: PerturbationModel + ?Sized>(
    model: &mut M,
    instances: &Matrix,
    background: &[f64],
    feature_names: &[String],
    n_permutations: usize,
    base_seed: u64,
) -> Result<Vec<AttributionMatrix>> {
    let n = instances.ncols();
    let k = model.n_outputs();
    let mut per_output = vec![Matrix::zeros(instances.nrows(), n); k];
    for r in 0..instances.nrows() {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(r as u64));
        let phi = explain_instance(model, instances.row(r), background, n_permutations, &mut rng)?;
        for (o, m) in per_output.iter_mut().enumerate() {
            for i in 0..n {
                m.set(r, i, phi[o * n + i]);
            }
        }
    }
    per_output
        .into_iter()
        .map(|m| AttributionMatrix::new(m, feature_names.to_vec()))
        .collect()
}

/// Globally aggregated feature importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    /// Mean plus population standard deviation of absolute attributions.
    pub raw: Vec<f64>,
    /// `raw` (zeros floored) divided by its sum.
    pub normalized: Vec<f64>,
}

impl FeatureWeights {
    pub fn uniform(n: usize) -> Self {
        Self { raw: vec![1.0; n], normalized: vec![1.0 / n as f64; n] }
    }

    /// Normalizes arbitrary non-negative raw scores.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(AuditError::EmptyInput("no features".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AuditError::Domain("raw weights must be finite and non-negative".into()));
        }
        let floored: Vec<f64> = raw.iter().map(|&v| if v > 0.0 { v } else { WEIGHT_FLOOR }).collect();
        let total: f64 = floored.iter().sum();
        let normalized = floored.iter().map(|v| v / total).collect();
        Ok(Self { raw, normalized })
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

pub fn global_attributions(a: &AttributionMatrix) -> Result<FeatureWeights> {
    let n = a.values.nrows();
    if n == 0 {
        return Err(AuditError::EmptyInput("attribution matrix has no rows".into()));
    }
    let raw = (0..a.values.ncols())
        .map(|i| {
            let abs: Vec<f64> = (0..n).map(|k| a.values.get(k, i).abs()).collect();
            let mean = abs.iter().sum::<f64>() / n as f64;
            let var = abs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            mean + var.sqrt()
        })
        .collect();
    FeatureWeights::from_raw(raw)
}
