use crate::error::{AuditError, Result};
use crate::rules::Rule;
use crate::sim::GroundTruthRule;

/// Whether `candidate` recovers `truth`: same target, a coefficient with the
/// expected sign, and the same grid region. A single-predicate truth is also
/// recovered by its complement carrying the opposite sign; a set-membership
/// truth by any one of its disjuncts.
pub fn canonical_match(candidate: &Rule, truth: &GroundTruthRule) -> Result<bool> {
    if !candidate.is_canonical() || truth.disjuncts.iter().any(|d| !d.is_canonical()) {
        return Err(AuditError::Contract("rules must be canonicalized onto the integer grid before matching".into()));
    }
    if candidate.target != truth.target || candidate.coefficient == 0.0 {
        return Ok(false);
    }
    let sign = candidate.coefficient.signum();
    if sign == truth.sign && truth.disjuncts.iter().any(|d| candidate.same_conditions(&d.conditions)) {
        return Ok(true);
    }
    if let [only] = truth.disjuncts.as_slice() {
        if let ([t], [c]) = (only.conditions.as_slice(), candidate.conditions.as_slice()) {
            return Ok(sign == -truth.sign && *c == t.complement());
        }
    }
    Ok(false)
}
