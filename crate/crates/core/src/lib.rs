//! Rule-based bias auditing for LLM-as-a-judge outputs.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod lasso;
pub mod pipeline;
pub mod rules;
pub mod shap;
pub mod sim;
pub mod text;
pub mod tree;

pub use error::{AuditError, Result};
