use super::ValueRecord;
use crate::error::{Error, Result};
use crate::special::log_add_exp;

/// Combines a stored value record with a new record that landed within the
/// merge radius of it.
pub trait MergeFn {
    fn merge(&self, existing: ValueRecord, incoming: ValueRecord) -> Result<ValueRecord>;
}

impl<F> MergeFn for F
where
    F: Fn(ValueRecord, ValueRecord) -> Result<ValueRecord>,
{
    fn merge(&self, existing: ValueRecord, incoming: ValueRecord) -> Result<ValueRecord> {
        self(existing, incoming)
    }
}

/// Running mean on the likelihood scale, for stochastic estimates.
#[derive(Clone, Copy, Debug, Default)]
pub struct PseudoMarginalMerge;

impl MergeFn for PseudoMarginalMerge {
    fn merge(&self, existing: ValueRecord, incoming: ValueRecord) -> Result<ValueRecord> {
        merge_pm(existing, incoming)
    }
}

/// Exact evaluations: the stored value already is the posterior, so new
/// information is dropped.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeepExisting;

impl MergeFn for KeepExisting {
    fn merge(&self, existing: ValueRecord, _incoming: ValueRecord) -> Result<ValueRecord> {
        Ok(existing)
    }
}

/// `[log(n e^l + n* e^l*) - log(n + n*), n + n*]`, evaluated in log space.
///
/// With `n* = 1` this is the log of the running arithmetic mean of the
/// likelihood-scale estimates folded into the entry.
pub fn merge_pm(existing: ValueRecord, incoming: ValueRecord) -> Result<ValueRecord> {
    if !existing.log_value.is_finite() || !incoming.log_value.is_finite() {
        return Err(Error::NonFinite(format!(
            "cannot merge log values {} and {}",
            existing.log_value, incoming.log_value
        )));
    }
    if existing.count == 0 || incoming.count == 0 {
        return Err(crate::error::invalid("merge counts must be at least 1"));
    }
    let n = existing.count as f64;
    let m = incoming.count as f64;
    let total = existing.count + incoming.count;
    let log_sum = log_add_exp(existing.log_value + n.ln(), incoming.log_value + m.ln());
    Ok(ValueRecord {
        log_value: log_sum - (total as f64).ln(),
        count: total,
    })
}
