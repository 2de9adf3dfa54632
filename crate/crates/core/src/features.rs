//! Canonical feature names of the ordinal input abstraction and the output
//! metrics, plus a small dense row-major matrix used throughout the crate.

use crate::error::{AuditError, Result};

pub const N_INPUTS: usize = 11;
pub const N_OUTPUTS: usize = 7;

/// Lowest and highest score on the ordinal input grid.
pub const GRID_MIN: i64 = 1;
pub const GRID_MAX: i64 = 5;

pub const INPUT_NAMES: [&str; N_INPUTS] = [
    "conceptually_dense",
    "technically_complicated",
    "common",
    "socially_controversial",
    "unambiguous",
    "positive",
    "negative",
    "neutral",
    "geo_variability",
    "interdisciplinary",
    "time_variability",
];

pub const OUTPUT_NAMES: [&str; N_OUTPUTS] = [
    "gunning_fog",
    "length_chars",
    "sentiment",
    "subjectivity",
    "framing_effect",
    "information_overload",
    "oversimplification",
];

/// Outputs scored by a judge on the 1..5 scale (clamped in simulation).
pub const JUDGED_OUTPUTS: [&str; 3] = ["framing_effect", "information_overload", "oversimplification"];

pub fn input_index(name: &str) -> Result<usize> {
    INPUT_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| AuditError::Schema(format!("unknown input feature `{name}`")))
}

pub fn output_index(name: &str) -> Result<usize> {
    OUTPUT_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| AuditError::Schema(format!("unknown output feature `{name}`")))
}

pub fn is_judged_output(name: &str) -> bool {
    JUDGED_OUTPUTS.contains(&name)
}

pub fn input_names() -> Vec<String> {
    INPUT_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AuditError::Dimension { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(AuditError::Dimension { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sub-matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}
