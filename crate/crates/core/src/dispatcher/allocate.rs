//! Proportional job allocation by largest remainder (Hamilton apportionment).
//!
//! Site `i` has quota `q_i = n · p_i / Σp`. Every site first receives
//! `⌊q_i⌋`; the `n − Σ⌊q_i⌋` leftover jobs go one each to the sites with the
//! largest fractional parts. Equal fractional parts prefer the larger power,
//! then the lower list index. Each count therefore lies strictly within 1 of
//! its quota.

use thiserror::Error;

/// Fractional parts are compared at this resolution so that quotas equal in
/// exact arithmetic compare equal in floating point.
const RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocationError {
    #[error("no sites to allocate over")]
    EmptyPowerList,
    #[error("power at position {0} is not a positive finite number")]
    InvalidPower(usize),
}

pub fn allocate(n_jobs: u64, powers: &[f64]) -> Result<Vec<u64>, AllocationError> {
    if powers.is_empty() {
        return Err(AllocationError::EmptyPowerList);
    }
    if let Some(i) = powers.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(AllocationError::InvalidPower(i));
    }
    let total: f64 = powers.iter().sum();
    let n = n_jobs as f64;
    let mut counts = Vec::with_capacity(powers.len());
    let mut remainders = Vec::with_capacity(powers.len());
    for (i, p) in powers.iter().enumerate() {
        let quota = n * p / total;
        let base = (quota + RESOLUTION).floor();
        counts.push(base as u64);
        let frac = ((quota - base) / RESOLUTION).round().max(0.0) as i64;
        remainders.push((frac, *p, i));
    }
    let assigned: u64 = counts.iter().sum();
    let leftover = n_jobs.saturating_sub(assigned) as usize;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, i) in remainders.iter().take(leftover) {
        counts[i] += 1;
    }
    Ok(counts)
}
