//! Topics, ordinal abstraction matrices and the dataset-backed lookups used
//! when a model can only be queried through previously observed points.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::features::{Matrix, GRID_MAX, GRID_MIN, INPUT_NAMES, N_INPUTS, N_OUTPUTS, OUTPUT_NAMES};

/// Distances within this much of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicRecord {
    pub id: String,
    pub domain: String,
    pub text: String,
}

/// Topics with their ordinal input scores and measured output metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionMatrix {
    topic_ids: Vec<String>,
    inputs: Matrix,
    outputs: Matrix,
}

impl AbstractionMatrix {
    /// Builds a matrix after checking every invariant: inputs on the 1..5
    /// grid, finite outputs, unique ids and matching row counts.
    pub fn new(topic_ids: Vec<String>, inputs: Matrix, outputs: Matrix) -> Result<Self> {
        if inputs.ncols() != N_INPUTS {
            return Err(AuditError::Dimension { expected: N_INPUTS, got: inputs.ncols() });
        }
        if outputs.ncols() != N_OUTPUTS {
            return Err(AuditError::Dimension { expected: N_OUTPUTS, got: outputs.ncols() });
        }
        if inputs.nrows() != topic_ids.len() || outputs.nrows() != topic_ids.len() {
            return Err(AuditError::Schema(format!(
                "row count mismatch: {} ids, {} input rows, {} output rows",
                topic_ids.len(),
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(topic_ids.len());
        for (r, id) in topic_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(AuditError::Schema(format!("duplicate id `{id}`")));
            }
            for (c, &v) in inputs.row(r).iter().enumerate() {
                check_grid_value(v).map_err(|message| AuditError::Range {
                    row: id.clone(),
                    message: format!("{}: {message}", INPUT_NAMES[c]),
                })?;
            }
            for (c, &v) in outputs.row(r).iter().enumerate() {
                if !v.is_finite() {
                    return Err(AuditError::Parse(format!(
                        "row {id}: non-finite value in `{}`",
                        OUTPUT_NAMES[c]
                    )));
                }
            }
        }
        Ok(Self { topic_ids, inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.topic_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topic_ids.is_empty()
    }

    pub fn topic_ids(&self) -> &[String] {
        &self.topic_ids
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn output_column(&self, idx: usize) -> Vec<f64> {
        self.outputs.column(idx)
    }

    pub fn input_names(&self) -> [&'static str; N_INPUTS] {
        INPUT_NAMES
    }

    pub fn output_names(&self) -> [&'static str; N_OUTPUTS] {
        OUTPUT_NAMES
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["id"];
        header.extend(INPUT_NAMES);
        header.extend(OUTPUT_NAMES);
        wtr.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = Vec::with_capacity(1 + N_INPUTS + N_OUTPUTS);
            rec.push(self.topic_ids[r].clone());
            rec.extend(self.inputs.row(r).iter().map(|v| format!("{v}")));
            rec.extend(self.outputs.row(r).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers()?.clone();
        let position = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| AuditError::Schema(format!("missing column `{name}`")))
        };
        let id_col = position("id")?;
        let in_cols = INPUT_NAMES.iter().map(|n| position(n)).collect::<Result<Vec<_>>>()?;
        let out_cols = OUTPUT_NAMES.iter().map(|n| position(n)).collect::<Result<Vec<_>>>()?;

        let mut ids = Vec::new();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(id_col).unwrap_or_default().to_string();
            for (c, &col) in in_cols.iter().enumerate() {
                let raw = rec.get(col).unwrap_or_default();
                let v: f64 = raw.parse().map_err(|_| AuditError::Range {
                    row: id.clone(),
                    message: format!("{}: `{raw}` is not a score", INPUT_NAMES[c]),
                })?;
                check_grid_value(v).map_err(|message| AuditError::Range {
                    row: id.clone(),
                    message: format!("{}: {message}", INPUT_NAMES[c]),
                })?;
                inputs.push(v);
            }
            for (c, &col) in out_cols.iter().enumerate() {
                let raw = rec.get(col).unwrap_or_default();
                let v: f64 = raw.parse().map_err(|_| {
                    AuditError::Parse(format!("row {id}: `{raw}` in `{}` is not a number", OUTPUT_NAMES[c]))
                })?;
                if !v.is_finite() {
                    return Err(AuditError::Parse(format!(
                        "row {id}: non-finite value in `{}`",
                        OUTPUT_NAMES[c]
                    )));
                }
                outputs.push(v);
            }
            ids.push(id);
        }
        let n = ids.len();
        Self::new(ids, Matrix::new(n, N_INPUTS, inputs)?, Matrix::new(n, N_OUTPUTS, outputs)?)
    }
}

fn check_grid_value(v: f64) -> std::result::Result<(), String> {
    if v.fract() != 0.0 || v < GRID_MIN as f64 || v > GRID_MAX as f64 {
        return Err(format!("score {v} outside {GRID_MIN}..{GRID_MAX}"));
    }
    Ok(())
}

pub fn load_abstraction_matrix(path: impl AsRef<Path>) -> Result<AbstractionMatrix> {
    let f = std::fs::File::open(path)?;
    AbstractionMatrix::read_csv(std::io::BufReader::new(f))
}

pub fn save_abstraction_matrix(m: &AbstractionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    m.write_csv(std::io::BufWriter::new(f))
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<TopicRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    for col in ["id", "domain", "text"] {
        if !header.iter().any(|h| h == col) {
            return Err(AuditError::Schema(format!("missing column `{col}`")));
        }
    }
    let mut out: Vec<TopicRecord> = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.deserialize() {
        let t: TopicRecord = rec?;
        if t.text.trim().is_empty() {
            return Err(AuditError::Schema(format!("topic `{}` has empty text", t.id)));
        }
        if !seen.insert(t.id.clone()) {
            return Err(AuditError::Schema(format!("duplicate id `{}`", t.id)));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_topics(topics: &[TopicRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for t in topics {
        wtr.serialize(t)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reference point that "removed" features revert to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundVector {
    pub values: Vec<f64>,
}

/// Per-column minimum of the input scores.
pub fn background_of(m: &AbstractionMatrix) -> Result<BackgroundVector> {
    column_minima(m.inputs()).map(|values| BackgroundVector { values })
}

pub(crate) fn column_minima(inputs: &Matrix) -> Result<Vec<f64>> {
    if inputs.nrows() == 0 {
        return Err(AuditError::EmptyInput("cannot derive a background from zero rows".into()));
    }
    let mut mins = inputs.row(0).to_vec();
    for row in inputs.rows_iter().skip(1) {
        for (m, &v) in mins.iter_mut().zip(row) {
            if v < *m {
                *m = v;
            }
        }
    }
    Ok(mins)
}

/// Index of a row whose inputs are closest (Euclidean) to `query`. Ties are
/// broken uniformly at random by a generator seeded with `seed`.
pub fn nearest_datapoint(m: &AbstractionMatrix, query: &[f64], seed: u64) -> Result<usize> {
    if query.len() != N_INPUTS {
        return Err(AuditError::Dimension { expected: N_INPUTS, got: query.len() });
    }
    if m.is_empty() {
        return Err(AuditError::EmptyInput("nearest lookup in an empty matrix".into()));
    }
    let dist: Vec<f64> = m
        .inputs()
        .rows_iter()
        .map(|row| row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] - best <= TIE_TOLERANCE).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ties[rng.random_range(0..ties.len())])
}

/// Distinct input rows with the indices of the original rows they came from.
#[derive(Debug, Clone)]
pub struct UniqueRows {
    pub inputs: Matrix,
    pub members: Vec<Vec<usize>>,
    /// For each original row, the unique row it maps to.
    pub group_of: Vec<usize>,
}

impl UniqueRows {
    pub fn new(inputs: &Matrix) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut uniq: Vec<usize> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut group_of = Vec::with_capacity(inputs.nrows());
        for (r, row) in inputs.rows_iter().enumerate() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                uniq.push(r);
                members.push(Vec::new());
                uniq.len() - 1
            });
            members[g].push(r);
            group_of.push(g);
        }
        Self { inputs: inputs.select_rows(&uniq), members, group_of }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.len() as f64).collect()
    }

    /// Mean of `values` (indexed by original row) within each group.
    pub fn group_means(&self, values: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| m.iter().map(|&i| values[i]).sum::<f64>() / m.len() as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AbstractionMatrix {
        let inputs = Matrix::from_rows(&[[3.0, 1.0, 2.0, 4.0, 5.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0], [1.0; 11]]).unwrap();
        let outputs = Matrix::from_rows(&[[8.5, 900.0, 0.2, 0.4, 2.0, 3.0, 1.0], [9.0, 300.0, -0.1, 0.3, 2.5, 2.5, 2.5]]).unwrap();
        AbstractionMatrix::new(vec!["a".into(), "b".into()], inputs, outputs).unwrap()
    }

    fn csv_text(m: &AbstractionMatrix) -> String {
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn parses_two_rows() {
        let m = tiny();
        let back = AbstractionMatrix::read_csv(csv_text(&m).as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back, m);
    }

    #[test]
    fn out_of_grid_cell_names_row() {
        let text = csv_text(&tiny()).replacen("\na,3,", "\na,6,", 1);
        match AbstractionMatrix::read_csv(text.as_bytes()) {
            Err(AuditError::Range { row, .. }) => assert_eq!(row, "a"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn renamed_column_is_schema_error() {
        let text = csv_text(&tiny()).replacen("common", "commonality", 1);
        let err = AbstractionMatrix::read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, AuditError::Schema(ref s) if s.contains("`common`")), "{err}");
    }

    #[test]
    fn non_finite_output_rejected() {
        let text = csv_text(&tiny()).replacen(",900,", ",NaN,", 1);
        assert!(matches!(AbstractionMatrix::read_csv(text.as_bytes()), Err(AuditError::Parse(_))));
    }

    #[test]
    fn background_single_row_is_that_row() {
        let inputs = Matrix::from_rows(&[[3.0, 1.0, 2.0, 4.0, 5.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let m = AbstractionMatrix::new(vec!["x".into()], inputs.clone(), Matrix::zeros(1, 7)).unwrap();
        assert_eq!(background_of(&m).unwrap().values, inputs.row(0).to_vec());
    }

    #[test]
    fn background_takes_column_minima() {
        assert_eq!(background_of(&tiny()).unwrap().values, vec![1.0; 11]);
    }

    #[test]
    fn background_of_empty_matrix_errors() {
        let m = AbstractionMatrix::new(vec![], Matrix::zeros(0, 11), Matrix::zeros(0, 7)).unwrap();
        assert!(matches!(background_of(&m), Err(AuditError::EmptyInput(_))));
    }

    #[test]
    fn nearest_exact_match_and_dimension_check() {
        let m = tiny();
        assert_eq!(nearest_datapoint(&m, m.inputs().row(0), 3).unwrap(), 0);
        assert!(matches!(nearest_datapoint(&m, &[1.0; 10], 0), Err(AuditError::Dimension { .. })));
    }

    #[test]
    fn nearest_tie_is_deterministic_per_seed() {
        let inputs = Matrix::from_rows(&[[1.0; 11], [3.0; 11]]).unwrap();
        let m = AbstractionMatrix::new(vec!["a".into(), "b".into()], inputs, Matrix::zeros(2, 7)).unwrap();
        let q = [2.0; 11];
        for seed in 0..20 {
            assert_eq!(nearest_datapoint(&m, &q, seed).unwrap(), nearest_datapoint(&m, &q, seed).unwrap());
        }
        let picks: HashSet<usize> = (0..40).map(|s| nearest_datapoint(&m, &q, s).unwrap()).collect();
        assert_eq!(picks.len(), 2, "both tied rows should be reachable");
    }

    #[test]
    fn unique_rows_group_duplicates() {
        let inputs = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [1.0, 2.0]]).unwrap();
        let u = UniqueRows::new(&inputs);
        assert_eq!(u.len(), 2);
        assert_eq!(u.members, vec![vec![0, 2], vec![1]]);
        assert_eq!(u.group_means(&[1.0, 5.0, 3.0]), vec![2.0, 5.0]);
    }
}
