use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatcher::allocate::{allocate, AllocationError};
use crate::model::{JobsetSpec, Timestamp, ValidationError};
use crate::registry::RegistryData;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub site_id: String,
    pub job_indices: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionPlan {
    pub jobset_id: String,
    pub allocations: Vec<Allocation>,
    pub created_at: Timestamp,
}

impl SubmissionPlan {
    /// Jobs per site, in allocation order.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.allocations
            .iter()
            .map(|a| (a.site_id.clone(), a.job_indices.len()))
            .collect()
    }

    pub fn site_of(&self, index: u32) -> Option<&str> {
        self.allocations
            .iter()
            .find(|a| a.job_indices.contains(&index))
            .map(|a| a.site_id.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unknown active set {0}")]
    UnknownActiveSet(String),
    #[error("active set {set} names site {site}, which is no longer registered")]
    StaleActiveSet { set: String, site: String },
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Splits the jobset over its active set in proportion to site power. Job
/// indices are handed out as contiguous ranges in active-set order.
pub fn plan_submission(
    spec: &JobsetSpec,
    registry: &RegistryData,
    now: Timestamp,
) -> Result<SubmissionPlan, PlanError> {
    spec.validate()?;
    let set = registry
        .active_set(&spec.active_set)
        .ok_or_else(|| PlanError::UnknownActiveSet(spec.active_set.clone()))?;
    let mut powers = Vec::with_capacity(set.site_ids.len());
    for site in &set.site_ids {
        let record = registry
            .resource(site)
            .ok_or_else(|| PlanError::StaleActiveSet {
                set: set.name.clone(),
                site: site.clone(),
            })?;
        powers.push(record.power());
    }
    let counts = allocate(u64::from(spec.job_count), &powers)?;
    let mut next = 0u32;
    let allocations = set
        .site_ids
        .iter()
        .zip(counts)
        .map(|(site, count)| {
            let start = next;
            next += count as u32;
            Allocation {
                site_id: site.clone(),
                job_indices: (start..next).collect(),
            }
        })
        .collect();
    Ok(SubmissionPlan {
        jobset_id: spec.jobset_id.clone(),
        allocations,
        created_at: now,
    })
}
