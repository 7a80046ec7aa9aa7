use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::Utc;
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::credential::{validate, ProxyCredential, Validity};
use crate::dispatcher::{plan_submission, Dispatcher, PlanError, SubmitError};
use crate::jobs::JobTable;
use crate::model::{job_id, GridUri, JobsetSpec};
use crate::monitor::{Monitor, MonitorError};
use crate::portal::archive::{Archive, ArchiveEntry};
use crate::portal::config::PortalConfig;
use crate::registry::{Registry, RegistryError};
use crate::staging::{ReplicaCatalog, ToolBundle, ToolCacheDeployer};

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for PortalError {
    fn from(e: std::io::Error) -> Self {
        PortalError::Internal(e.to_string())
    }
}

impl From<RegistryError> for PortalError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownActiveSet(_) => PortalError::NotFound(e.to_string()),
            RegistryError::Io(e) => PortalError::Internal(e.to_string()),
            other => PortalError::Validation(other.to_string()),
        }
    }
}

impl From<PlanError> for PortalError {
    fn from(e: PlanError) -> Self {
        PortalError::Validation(e.to_string())
    }
}

impl From<SubmitError> for PortalError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Auth(_) => PortalError::Unauthorized(e.to_string()),
            SubmitError::Mismatch { .. } => PortalError::Internal(e.to_string()),
        }
    }
}

impl From<MonitorError> for PortalError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Auth(_) => PortalError::Unauthorized(e.to_string()),
            MonitorError::UnknownJobset(_) => PortalError::NotFound(e.to_string()),
        }
    }
}

/// Tunables that tests and the desk-scale fabric shorten.
#[derive(Debug, Clone)]
pub struct PortalOptions {
    pub rpc_timeout: Duration,
    pub probe_timeout: Duration,
}

impl Default for PortalOptions {
    fn default() -> Self {
        PortalOptions {
            rpc_timeout: crate::dispatcher::submit::DEFAULT_RPC_TIMEOUT,
            probe_timeout: crate::registry::PROBE_TIMEOUT,
        }
    }
}

pub struct Portal {
    config: PortalConfig,
    credential: RwLock<ProxyCredential>,
    registry: Arc<Registry>,
    catalog: Arc<ReplicaCatalog>,
    jobs: Arc<JobTable>,
    archive: Archive,
    dispatcher: Arc<Dispatcher>,
    monitor: Arc<Monitor>,
    submissions: Mutex<HashMap<String, JoinHandle<()>>>,
}

/// Writes the tool payload once; its bytes depend only on name and version.
async fn prepare_tool_bundle(
    state_dir: &Path,
    name: &str,
    version: &str,
) -> Result<ToolBundle, PortalError> {
    let path = state_dir
        .join("tools")
        .join(format!("{name}-{version}.bundle"));
    if !path.exists() {
        let payload = format!("{name} {version}\nwrapper-runtime\nstaging-client\n");
        crate::staging::transfer::write_local_atomic(&path, payload.as_bytes()).await?;
    }
    let path = std::fs::canonicalize(&path)?;
    let uri = GridUri::file(path.to_string_lossy().into_owned())
        .map_err(|e| PortalError::Internal(e.to_string()))?;
    ToolBundle::from_payload(name, version, uri)
        .await
        .map_err(|e| PortalError::Internal(e.to_string()))
}

impl Portal {
    pub async fn start(
        config: PortalConfig,
        credential: ProxyCredential,
        options: PortalOptions,
    ) -> Result<Arc<Self>, PortalError> {
        std::fs::create_dir_all(config.state_dir())?;
        let registry =
            Arc::new(Registry::open(&config.registry)?.with_probe_timeout(options.probe_timeout));
        let catalog = Arc::new(ReplicaCatalog::open(&config.catalog)?);
        let jobs = Arc::new(JobTable::open(&config.jobs)?);
        let archive = Archive::open(&config.archive)?;
        let bundle = match &config.tool {
            Some((name, version)) => {
                Some(prepare_tool_bundle(config.state_dir(), name, version).await?)
            }
            None => None,
        };
        let deployer = Arc::new(ToolCacheDeployer::new(registry.clone()));
        let dispatcher = Arc::new(
            Dispatcher::new(registry.clone(), deployer, jobs.clone(), bundle)
                .with_rpc_timeout(options.rpc_timeout),
        );
        let monitor = Arc::new(
            Monitor::new(jobs.clone(), registry.clone(), catalog.clone())
                .with_rpc_timeout(options.rpc_timeout),
        );
        for entry in archive.list() {
            monitor.track(&entry.spec);
        }
        Ok(Arc::new(Portal {
            config,
            credential: RwLock::new(credential),
            registry,
            catalog,
            jobs,
            archive,
            dispatcher,
            monitor,
            submissions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn config(&self) -> &PortalConfig {
        &self.config
    }

    pub fn credential(&self) -> ProxyCredential {
        self.credential.read().unwrap().clone()
    }

    pub fn set_credential(&self, cred: ProxyCredential) {
        *self.credential.write().unwrap() = cred;
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn catalog(&self) -> &Arc<ReplicaCatalog> {
        &self.catalog
    }

    pub fn jobs(&self) -> &Arc<JobTable> {
        &self.jobs
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn dispatcher(&self) -> &Arc<Dispatcher> {
        &self.dispatcher
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    /// Accepts a request token iff it is the portal credential's token and
    /// that credential is currently valid.
    pub fn authorize(&self, token: Option<&str>) -> Result<ProxyCredential, PortalError> {
        let cred = self.credential();
        match token {
            Some(t) if t == cred.token => {}
            Some(_) => return Err(PortalError::Unauthorized("token does not match".into())),
            None => return Err(PortalError::Unauthorized("missing X-Proxy-Token".into())),
        }
        match validate(&cred, Utc::now()) {
            Validity::Valid => Ok(cred),
            other => Err(PortalError::Unauthorized(format!(
                "portal credential is {other:?}"
            ))),
        }
    }

    /// Archives the jobset with its plan, then starts asynchronous submission.
    /// Returns once the archive entry is durable.
    pub fn submit_jobset(&self, spec: JobsetSpec) -> Result<String, PortalError> {
        spec.validate()
            .map_err(|e| PortalError::Validation(e.to_string()))?;
        let cred = self.credential();
        match validate(&cred, Utc::now()) {
            Validity::Valid => {}
            other => {
                return Err(PortalError::Unauthorized(format!(
                    "portal credential is {other:?}"
                )))
            }
        }
        let snapshot = self.registry.snapshot();
        let now = Utc::now();
        let entry = self
            .archive
            .append_with(&spec.jobset_id, |id| {
                let mut spec = spec.clone();
                spec.jobset_id = id.to_string();
                let plan = plan_submission(&spec, &snapshot, now)?;
                let job_ids = (0..spec.job_count).map(|i| job_id(id, i)).collect();
                Ok::<_, PortalError>(ArchiveEntry {
                    jobset_id: id.to_string(),
                    spec,
                    plan,
                    submitted_at: now,
                    job_ids,
                })
            })?
            .ok_or_else(|| {
                PortalError::Validation(format!("jobset {} already exists", spec.jobset_id))
            })?;
        self.monitor.track(&entry.spec);
        let submission = self
            .dispatcher
            .submit_plan(&entry.plan, &entry.spec, &cred)?;
        self.submissions
            .lock()
            .unwrap()
            .insert(entry.jobset_id.clone(), submission.task);
        tracing::info!(jobset = %entry.jobset_id, jobs = entry.spec.job_count, "jobset accepted");
        Ok(entry.jobset_id)
    }

    /// Clones an archived spec into a new jobset whose seeds follow on from
    /// the original's.
    pub fn resubmit(&self, jobset_id: &str) -> Result<String, PortalError> {
        let old = self
            .archive
            .get(jobset_id)
            .ok_or_else(|| PortalError::NotFound(format!("unknown jobset {jobset_id}")))?;
        let mut spec = old.spec;
        spec.jobset_id = String::new();
        spec.rng_seed_base = spec.rng_seed_base.wrapping_add(u64::from(spec.job_count));
        self.submit_jobset(spec)
    }

    /// Waits until every job of the jobset has been acknowledged by its site
    /// or has failed to submit.
    pub async fn wait_submitted(&self, jobset_id: &str) {
        let task = self.submissions.lock().unwrap().remove(jobset_id);
        if let Some(task) = task {
            let _ = task.await;
        }
    }

    pub fn entry(&self, jobset_id: &str) -> Result<ArchiveEntry, PortalError> {
        self.archive
            .get(jobset_id)
            .ok_or_else(|| PortalError::NotFound(format!("unknown jobset {jobset_id}")))
    }
}
