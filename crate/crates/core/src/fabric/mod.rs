//! Simulated grid fabric.
//!
//! Each site runs a job-manager (CPU slots, GRAM-style reporter) and a file
//! server on their own TCP ports, plus a tool-cache area and the simulated
//! physics application. Many sites run inside one process.

pub mod app;
pub mod fileserver;
pub mod server;
pub mod site;
pub mod testbed;
pub mod wrapper;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GridUri;

pub use app::{run_simulated_app, AppOutput, Histogram, SummaryFile};
pub use server::{start_site, SiteHandle};
pub use site::Site;
pub use testbed::{batch_sites, resource_record, Fabric, FabricConfig, TESTBED_CPUS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobManagerKind {
    Fork,
    Batch,
    Broker,
}

impl JobManagerKind {
    pub fn service_name(self) -> &'static str {
        match self {
            JobManagerKind::Fork => "jobmanager-fork",
            JobManagerKind::Batch => "jobmanager-batch",
            JobManagerKind::Broker => "jobmanager-broker",
        }
    }
}

fn default_listen() -> String {
    "127.0.0.1:0".into()
}

fn default_seconds_per_event() -> f64 {
    0.01
}

fn default_queue_limit() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: String,
    pub cpu_count: u32,
    pub jobmanager_kind: JobManagerKind,
    pub base_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_listen")]
    pub file_listen: String,
    #[serde(default)]
    pub failure_rate: f64,
    #[serde(default = "default_seconds_per_event")]
    pub seconds_per_event: f64,
    #[serde(default = "default_queue_limit")]
    pub queue_limit: usize,
}

impl SiteConfig {
    pub fn new(
        site_id: impl Into<String>,
        cpu_count: u32,
        kind: JobManagerKind,
        base_dir: impl Into<PathBuf>,
    ) -> Self {
        SiteConfig {
            site_id: site_id.into(),
            cpu_count,
            jobmanager_kind: kind,
            base_dir: base_dir.into(),
            listen: default_listen(),
            file_listen: default_listen(),
            failure_rate: 0.0,
            seconds_per_event: default_seconds_per_event(),
            queue_limit: default_queue_limit(),
        }
    }

    /// Concurrent execution slots: one for fork sites, `cpu_count` otherwise.
    pub fn slots(&self) -> usize {
        match self.jobmanager_kind {
            JobManagerKind::Fork => 1,
            JobManagerKind::Batch | JobManagerKind::Broker => self.cpu_count.max(1) as usize,
        }
    }

    pub fn validate(&self) -> Result<(), SiteError> {
        let bad = |m: &str| Err(SiteError::Config(m.to_string()));
        if self.site_id.is_empty()
            || !self
                .site_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad("site_id must be non-empty [A-Za-z0-9._-]");
        }
        if self.cpu_count == 0 {
            return bad("cpu_count must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return bad("failure_rate must lie in [0, 1]");
        }
        if !(self.seconds_per_event >= 0.0 && self.seconds_per_event.is_finite()) {
            return bad("seconds_per_event must be a nonnegative number");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SiteError {
    #[error("cannot bind {0}: {1}")]
    Bind(String, std::io::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid site config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WrapperPhase {
    InstallLibs,
    StageIn,
    Run,
    StageOut,
    Register,
    Cleanup,
}

impl WrapperPhase {
    pub const ORDER: [WrapperPhase; 6] = [
        WrapperPhase::InstallLibs,
        WrapperPhase::StageIn,
        WrapperPhase::Run,
        WrapperPhase::StageOut,
        WrapperPhase::Register,
        WrapperPhase::Cleanup,
    ];

    /// Exit code reported when this phase fails.
    pub fn failure_exit_code(self) -> i32 {
        match self {
            WrapperPhase::Run => 1,
            WrapperPhase::InstallLibs => 10,
            WrapperPhase::StageIn => 11,
            WrapperPhase::StageOut => 12,
            WrapperPhase::Register => 13,
            WrapperPhase::Cleanup => 14,
        }
    }
}

/// Tool-cache version a job requires on its site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRequirement {
    pub name: String,
    pub version: String,
}

/// Everything the compute-host wrapper needs to run one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperRequest {
    pub jobset_id: String,
    pub job_index: u32,
    pub app_bundle: GridUri,
    #[serde(default)]
    pub app_install_path: Option<String>,
    #[serde(default)]
    pub input_data: Vec<GridUri>,
    pub results_uri: GridUri,
    pub events: u64,
    pub physics_model: String,
    pub seed: u64,
    #[serde(default)]
    pub toolcache: Option<ToolRequirement>,
}

impl WrapperRequest {
    /// Logical-name prefix used for replica registration.
    pub fn logical_prefix(&self) -> String {
        format!("{}/{}", self.jobset_id, self.job_index)
    }
}

/// One replica registration produced by the REGISTER phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub logical_name: String,
    pub uri: GridUri,
}

pub const MANIFEST_FILE: &str = "manifest.json";
