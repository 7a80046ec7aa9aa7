//! Grid access portal with a built-in simulated multi-site fabric.
//!
//! Jobsets are split over an active set of registered sites in proportion to
//! their computing power, submitted asynchronously to per-site job-managers,
//! polled for GRAM-style state, and their outputs staged back, registered and
//! merged into a live dataset summary.

pub mod checksum;
pub mod credential;
pub mod dispatcher;
pub mod fabric;
pub mod jobs;
pub mod model;
pub mod monitor;
pub mod persist;
pub mod portal;
pub mod registry;
pub mod staging;
pub mod wire;

pub use credential::{ProxyCredential, Validity};
pub use dispatcher::{allocate, plan_submission, Dispatcher, SubmissionPlan};
pub use fabric::{start_site, JobManagerKind, SiteConfig, SiteHandle};
pub use jobs::JobTable;
pub use model::{
    job_id, parse_grid_uri, GridUri, JobEvent, JobRecord, JobState, JobsetSpec, Timestamp,
};
pub use monitor::{DatasetSummary, Monitor};
pub use registry::{ActiveSet, Registry, ResourceRecord};
pub use staging::{ReplicaCatalog, ToolBundle, ToolCacheDeployer};
