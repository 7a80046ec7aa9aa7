//! Job lifecycle as reported by a site job-manager.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Unsubmitted,
    Pending,
    Active,
    Done,
    Failed,
    Canceled,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::Unsubmitted,
        JobState::Pending,
        JobState::Active,
        JobState::Done,
        JobState::Failed,
        JobState::Canceled,
    ];

    /// DONE, FAILED and CANCELED have no outgoing transitions.
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Canceled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Unsubmitted => "UNSUBMITTED",
            JobState::Pending => "PENDING",
            JobState::Active => "ACTIVE",
            JobState::Done => "DONE",
            JobState::Failed => "FAILED",
            JobState::Canceled => "CANCELED",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown job state {0:?}")]
pub struct UnknownState(pub String);

impl FromStr for JobState {
    type Err = UnknownState;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JobState::ALL
            .into_iter()
            .find(|state| state.as_str() == s)
            .ok_or_else(|| UnknownState(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum JobEvent {
    Submit,
    Schedule,
    Complete { exit_code: i32 },
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid transition: {state} on {event:?}")]
pub struct InvalidTransition {
    pub state: JobState,
    pub event: JobEvent,
}

/// Successor of `state` under `event`.
pub fn transition(state: JobState, event: JobEvent) -> Result<JobState, InvalidTransition> {
    use JobEvent::*;
    use JobState::*;
    match (state, event) {
        (Unsubmitted, Submit) => Ok(Pending),
        (Pending, Schedule) => Ok(Active),
        (Pending, Cancel) => Ok(Canceled),
        (Active, Complete { exit_code: 0 }) => Ok(Done),
        (Active, Complete { .. }) => Ok(Failed),
        (Active, Cancel) => Ok(Canceled),
        _ => Err(InvalidTransition { state, event }),
    }
}

/// Whether `to` is reachable from `from` by one or more table transitions.
pub fn reachable(from: JobState, to: JobState) -> bool {
    use JobState::*;
    match from {
        Unsubmitted => to != Unsubmitted,
        Pending => matches!(to, Active | Done | Failed | Canceled),
        Active => matches!(to, Done | Failed | Canceled),
        Done | Failed | Canceled => false,
    }
}

/// True when `states` is a full path through the transition table.
pub fn is_valid_path(states: &[JobState]) -> bool {
    states.windows(2).all(|w| {
        [
            JobEvent::Submit,
            JobEvent::Schedule,
            JobEvent::Complete { exit_code: 0 },
            JobEvent::Complete { exit_code: 1 },
            JobEvent::Cancel,
        ]
        .into_iter()
        .any(|event| transition(w[0], event) == Ok(w[1]))
    })
}

/// True when `states` could be a sampled view of some table path: each step
/// either repeats or moves strictly forward.
pub fn is_valid_subsequence(states: &[JobState]) -> bool {
    states
        .windows(2)
        .all(|w| w[0] == w[1] || reachable(w[0], w[1]))
}
