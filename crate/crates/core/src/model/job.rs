use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::{reachable, transition, InvalidTransition, JobEvent, JobState};
use super::uri::GridUri;

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {field}: {reason}")]
pub struct ValidationError {
    pub field: &'static str,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ValidationError {
            field,
            reason: reason.into(),
        }
    }
}

/// The archived form values of one jobset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobsetSpec {
    /// Assigned by the portal when left empty.
    #[serde(default)]
    pub jobset_id: String,
    pub app_bundle: GridUri,
    #[serde(default)]
    pub input_data: Vec<GridUri>,
    pub results_base: GridUri,
    pub events_per_job: u64,
    pub physics_model: String,
    pub job_count: u32,
    #[serde(default)]
    pub rng_seed_base: u64,
    pub active_set: String,
}

impl JobsetSpec {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.job_count == 0 {
            return Err(ValidationError::new("job_count", "must be at least 1"));
        }
        if self.events_per_job == 0 {
            return Err(ValidationError::new("events_per_job", "must be at least 1"));
        }
        if !self.results_base.scheme().is_writable() {
            return Err(ValidationError::new(
                "results_base",
                "scheme must be gsiftp or file",
            ));
        }
        if self.physics_model.is_empty() || self.physics_model.contains(char::is_whitespace) {
            return Err(ValidationError::new(
                "physics_model",
                "must be a non-empty tag without whitespace",
            ));
        }
        if self.physics_model.contains('"') {
            return Err(ValidationError::new(
                "physics_model",
                "must not contain quotes",
            ));
        }
        if self.active_set.is_empty() {
            return Err(ValidationError::new(
                "active_set",
                "must name a resource set",
            ));
        }
        if self
            .jobset_id
            .contains(|c: char| c.is_whitespace() || c == '/')
        {
            return Err(ValidationError::new(
                "jobset_id",
                "must not contain whitespace or '/'",
            ));
        }
        Ok(())
    }

    /// Seed handed to job `index`.
    pub fn seed_for(&self, index: u32) -> u64 {
        self.rng_seed_base.wrapping_add(index as u64)
    }

    /// Directory URI receiving the outputs of job `index`.
    pub fn results_uri(&self, index: u32) -> GridUri {
        self.results_base
            .join(&format!("{}/{}/", self.jobset_id, index))
            .expect("jobset ids and indices are valid path segments")
    }
}

/// Stable job identifier: `<jobset_id>.<index>`.
pub fn job_id(jobset_id: &str, index: u32) -> String {
    format!("{jobset_id}.{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub jobset_id: String,
    pub job_index: u32,
    pub site_id: String,
    pub contact: Option<String>,
    pub state: JobState,
    pub state_history: Vec<(Timestamp, JobState)>,
    pub exit_code: Option<i32>,
    pub output_uris: Vec<GridUri>,
    /// Set when the last status poll could not reach the site.
    #[serde(default)]
    pub stale: bool,
    #[serde(default)]
    pub stale_since: Option<Timestamp>,
    /// Why the job never reached its site, if it didn't.
    #[serde(default)]
    pub submit_error: Option<String>,
}

impl JobRecord {
    pub fn new(jobset_id: &str, job_index: u32, site_id: &str, now: Timestamp) -> Self {
        JobRecord {
            job_id: job_id(jobset_id, job_index),
            jobset_id: jobset_id.to_string(),
            job_index,
            site_id: site_id.to_string(),
            contact: None,
            state: JobState::Unsubmitted,
            state_history: vec![(now, JobState::Unsubmitted)],
            exit_code: None,
            output_uris: Vec::new(),
            stale: false,
            stale_since: None,
            submit_error: None,
        }
    }

    fn push_state(&mut self, state: JobState, now: Timestamp) {
        let last = self.state_history.last().map(|(t, _)| *t).unwrap_or(now);
        self.state_history.push((now.max(last), state));
        self.state = state;
    }

    /// Applies a lifecycle event through the transition table.
    pub fn apply(
        &mut self,
        event: JobEvent,
        now: Timestamp,
    ) -> Result<JobState, InvalidTransition> {
        let next = transition(self.state, event)?;
        if let JobEvent::Complete { exit_code } = event {
            self.exit_code = Some(exit_code);
        }
        self.push_state(next, now);
        Ok(next)
    }

    /// Records a state reported by the site. Polling may skip intermediate
    /// states but never moves backwards; a report that would is ignored.
    pub fn observe(&mut self, state: JobState, exit_code: Option<i32>, now: Timestamp) -> bool {
        self.stale = false;
        self.stale_since = None;
        if state == self.state || !reachable(self.state, state) {
            return false;
        }
        match state {
            JobState::Done => self.exit_code = Some(exit_code.unwrap_or(0)),
            JobState::Failed => self.exit_code = Some(exit_code.unwrap_or(1)),
            _ => {}
        }
        self.push_state(state, now);
        true
    }

    pub fn mark_stale(&mut self, now: Timestamp) {
        if !self.stale {
            self.stale = true;
            self.stale_since = Some(now);
        }
    }

    /// Checks the record-level invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        match self.state_history.last() {
            Some((_, s)) if *s == self.state => {}
            _ => return Err(format!("{}: state differs from history tail", self.job_id)),
        }
        if self.state_history.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(format!("{}: history timestamps decrease", self.job_id));
        }
        let has_exit = matches!(self.state, JobState::Done | JobState::Failed);
        if self.exit_code.is_some() != has_exit {
            return Err(format!("{}: exit code/state mismatch", self.job_id));
        }
        if !self.output_uris.is_empty() && self.state != JobState::Done {
            return Err(format!(
                "{}: outputs on a job that is not DONE",
                self.job_id
            ));
        }
        Ok(())
    }
}
