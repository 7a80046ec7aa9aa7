//! Domain types shared by every subsystem.

pub mod job;
pub mod state;
pub mod uri;

pub use job::{job_id, JobRecord, JobsetSpec, Timestamp, ValidationError};
pub use state::{
    is_valid_path, is_valid_subsequence, transition, InvalidTransition, JobEvent, JobState,
};
pub use uri::{format_grid_uri, parse_grid_uri, GridUri, MalformedUri, Scheme};
