//! Asynchronous per-site submission workers.

use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use futures::future::join_all;
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::credential::{delegate, validate, ProxyCredential, Validity};
use crate::dispatcher::jdl::render_broker_description;
use crate::dispatcher::plan::{Allocation, SubmissionPlan};
use crate::fabric::{JobManagerKind, ToolRequirement, WrapperRequest};
use crate::jobs::JobTable;
use crate::model::{job_id, JobEvent, JobRecord, JobsetSpec};
use crate::registry::{Registry, ResourceRecord};
use crate::staging::{ToolBundle, ToolCacheDeployer};
use crate::wire::{JobManagerClient, SubmitPayload};

pub const DEFAULT_RPC_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("credential rejected: {0:?}")]
    Auth(Validity),
    #[error("plan is for jobset {plan}, spec is {spec}")]
    Mismatch { plan: String, spec: String },
}

/// Records created for a plan plus the task driving their submission.
pub struct Submission {
    pub records: Vec<JobRecord>,
    pub task: JoinHandle<()>,
}

pub struct Dispatcher {
    registry: Arc<Registry>,
    deployer: Arc<ToolCacheDeployer>,
    jobs: Arc<JobTable>,
    bundle: Option<ToolBundle>,
    rpc_timeout: Duration,
    delegation_lifetime: chrono::Duration,
}

/// Builds the wrapper request for job `index` of `spec` on `site`.
pub fn wrapper_request(
    spec: &JobsetSpec,
    index: u32,
    site: &ResourceRecord,
    tool: Option<ToolRequirement>,
) -> WrapperRequest {
    WrapperRequest {
        jobset_id: spec.jobset_id.clone(),
        job_index: index,
        app_bundle: spec.app_bundle.clone(),
        app_install_path: site.app_install_path.clone(),
        input_data: spec.input_data.clone(),
        results_uri: spec.results_uri(index),
        events: spec.events_per_job,
        physics_model: spec.physics_model.clone(),
        seed: spec.seed_for(index),
        toolcache: tool,
    }
}

impl Dispatcher {
    pub fn new(
        registry: Arc<Registry>,
        deployer: Arc<ToolCacheDeployer>,
        jobs: Arc<JobTable>,
        bundle: Option<ToolBundle>,
    ) -> Self {
        Dispatcher {
            registry,
            deployer,
            jobs,
            bundle,
            rpc_timeout: DEFAULT_RPC_TIMEOUT,
            delegation_lifetime: chrono::Duration::hours(12),
        }
    }

    pub fn with_rpc_timeout(mut self, limit: Duration) -> Self {
        self.rpc_timeout = limit;
        self
    }

    pub fn with_delegation_lifetime(mut self, lifetime: chrono::Duration) -> Self {
        self.delegation_lifetime = lifetime;
        self
    }

    pub fn jobs(&self) -> &Arc<JobTable> {
        &self.jobs
    }

    pub fn deployer(&self) -> &Arc<ToolCacheDeployer> {
        &self.deployer
    }

    pub fn bundle(&self) -> Option<&ToolBundle> {
        self.bundle.as_ref()
    }

    /// Creates one UNSUBMITTED record per planned job and starts one worker
    /// per site. Returns without waiting for any site.
    pub fn submit_plan(
        self: &Arc<Self>,
        plan: &SubmissionPlan,
        spec: &JobsetSpec,
        cred: &ProxyCredential,
    ) -> Result<Submission, SubmitError> {
        if plan.jobset_id != spec.jobset_id {
            return Err(SubmitError::Mismatch {
                plan: plan.jobset_id.clone(),
                spec: spec.jobset_id.clone(),
            });
        }
        let now = Utc::now();
        match validate(cred, now) {
            Validity::Valid => {}
            other => return Err(SubmitError::Auth(other)),
        }
        let records: Vec<JobRecord> = plan
            .allocations
            .iter()
            .flat_map(|a| {
                a.job_indices
                    .iter()
                    .map(|i| JobRecord::new(&spec.jobset_id, *i, &a.site_id, now))
            })
            .collect();
        self.jobs.insert_all(records.clone());
        let workers: Vec<_> = plan
            .allocations
            .iter()
            .filter(|a| !a.job_indices.is_empty())
            .map(|a| {
                let this = self.clone();
                let (alloc, spec, cred) = (a.clone(), spec.clone(), cred.clone());
                async move { this.site_worker(alloc, spec, cred).await }
            })
            .collect();
        let jobs = self.jobs.clone();
        let task = tokio::spawn(async move {
            join_all(workers).await;
            if let Err(e) = jobs.persist() {
                tracing::error!(error = %e, "persisting job table failed");
            }
        });
        Ok(Submission { records, task })
    }

    fn fail(&self, jobset_id: &str, index: u32, reason: &str) {
        self.jobs.update(&job_id(jobset_id, index), |r| {
            r.submit_error = Some(reason.to_string());
        });
    }

    async fn site_worker(&self, alloc: Allocation, spec: JobsetSpec, cred: ProxyCredential) {
        let Some(site) = self.registry.get(&alloc.site_id) else {
            for i in &alloc.job_indices {
                self.fail(
                    &spec.jobset_id,
                    *i,
                    &format!("site {} is not registered", alloc.site_id),
                );
            }
            return;
        };
        if let Some(bundle) = &self.bundle {
            if let Err(e) = self
                .deployer
                .ensure_toolcache(&site.site_id, bundle, &cred)
                .await
            {
                let reason = format!("tool cache deployment failed: {e}");
                for i in &alloc.job_indices {
                    self.fail(&spec.jobset_id, *i, &reason);
                }
                return;
            }
        }
        let client = JobManagerClient::new(&site.jobmanager_contact, self.rpc_timeout);
        let tool = self.bundle.as_ref().map(ToolBundle::requirement);
        for &index in &alloc.job_indices {
            let id = job_id(&spec.jobset_id, index);
            let result = match delegate(&cred, self.delegation_lifetime, Utc::now()) {
                Err(e) => Err(e.to_string()),
                Ok(child) => {
                    let sent = if site.jobmanager_kind == JobManagerKind::Broker {
                        let doc = render_broker_description(&spec, index, tool.as_ref());
                        client.submit_jdl(doc, Some(child)).await
                    } else {
                        let request = wrapper_request(&spec, index, &site, tool.clone());
                        client
                            .submit(SubmitPayload {
                                request,
                                credential: child,
                            })
                            .await
                    };
                    sent.map_err(|e| e.to_string())
                }
            };
            match result {
                Ok(contact) => {
                    self.jobs.update(&id, |r| {
                        r.contact = Some(contact);
                        if let Err(e) = r.apply(JobEvent::Submit, Utc::now()) {
                            tracing::error!(job = %r.job_id, error = %e, "submit ack out of order");
                        }
                    });
                }
                Err(reason) => {
                    tracing::warn!(job = %id, %reason, "submission failed");
                    self.fail(&spec.jobset_id, index, &reason);
                }
            }
        }
    }
}
