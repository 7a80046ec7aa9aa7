//! Job monitoring: status polling, cancellation and the live dataset summary.
//!
//! Job records are updated only through [`JobRecord::observe`], so polled
//! histories are always subsequences of transition-table paths. The summary
//! histogram is recomputed from a per-job cache of DONE summaries, merged in
//! job-index order; `jobs_done` is the cache size and never decreases.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::Utc;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::credential::{validate, ProxyCredential, Validity};
use crate::fabric::app::{merge_histograms, Histogram, SummaryFile, SUMMARY_FILE};
use crate::fabric::{ManifestEntry, MANIFEST_FILE};
use crate::jobs::JobTable;
use crate::model::{JobRecord, JobState, JobsetSpec, Timestamp};
use crate::registry::Registry;
use crate::staging::{read_uri, ReplicaCatalog};
use crate::wire::JobManagerClient;

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(2);
pub const STATUS_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub jobset_id: String,
    pub histogram: Histogram,
    pub jobs_done: u32,
    pub jobs_total: u32,
    pub last_updated: Timestamp,
    /// DONE jobs whose summary file could not be read; excluded from the
    /// histogram until it appears.
    #[serde(default)]
    pub missing_results: Vec<String>,
}

/// Outcome for one job of a poll or cancel request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: Option<JobState>,
    #[serde(default)]
    pub stale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobStatus {
    fn of(record: &JobRecord) -> Self {
        JobStatus {
            job_id: record.job_id.clone(),
            state: Some(record.state),
            stale: record.stale,
            error: None,
        }
    }

    fn unknown(job_id: &str) -> Self {
        JobStatus {
            job_id: job_id.to_string(),
            state: None,
            stale: false,
            error: Some(format!("unknown job {job_id}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("credential rejected: {0:?}")]
    Auth(Validity),
    #[error("unknown jobset {0}")]
    UnknownJobset(String),
}

#[derive(Default)]
struct SummaryCache {
    per_job: BTreeMap<u32, Histogram>,
}

pub struct Monitor {
    jobs: Arc<JobTable>,
    registry: Arc<Registry>,
    catalog: Arc<ReplicaCatalog>,
    specs: RwLock<HashMap<String, JobsetSpec>>,
    summaries: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SummaryCache>>>>,
    poll_lock: tokio::sync::Mutex<()>,
    rpc_calls: AtomicU64,
    rpc_timeout: Duration,
}

enum Probe {
    Reported(JobState, Option<i32>),
    Unreachable(String),
}

impl Monitor {
    pub fn new(jobs: Arc<JobTable>, registry: Arc<Registry>, catalog: Arc<ReplicaCatalog>) -> Self {
        Monitor {
            jobs,
            registry,
            catalog,
            specs: RwLock::new(HashMap::new()),
            summaries: Mutex::new(HashMap::new()),
            poll_lock: tokio::sync::Mutex::new(()),
            rpc_calls: AtomicU64::new(0),
            rpc_timeout: STATUS_TIMEOUT,
        }
    }

    pub fn with_rpc_timeout(mut self, limit: Duration) -> Self {
        self.rpc_timeout = limit;
        self
    }

    /// Makes a jobset's results locations known to the monitor.
    pub fn track(&self, spec: &JobsetSpec) {
        self.specs
            .write()
            .unwrap()
            .insert(spec.jobset_id.clone(), spec.clone());
    }

    pub fn tracked(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.specs.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn spec(&self, jobset_id: &str) -> Option<JobsetSpec> {
        self.specs.read().unwrap().get(jobset_id).cloned()
    }

    /// Job-manager RPCs issued so far.
    pub fn rpc_calls(&self) -> u64 {
        self.rpc_calls.load(Ordering::SeqCst)
    }

    pub fn jobs(&self) -> &Arc<JobTable> {
        &self.jobs
    }

    fn client(&self, record: &JobRecord) -> Option<JobManagerClient> {
        let site = self.registry.get(&record.site_id)?;
        Some(JobManagerClient::new(
            &site.jobmanager_contact,
            self.rpc_timeout,
        ))
    }

    async fn probe(&self, record: &JobRecord, cancel: bool) -> Probe {
        let (Some(client), Some(contact)) = (self.client(record), record.contact.as_deref()) else {
            return Probe::Unreachable(format!("site {} is not registered", record.site_id));
        };
        self.rpc_calls.fetch_add(1, Ordering::SeqCst);
        let reply = if cancel {
            client.cancel(contact).await
        } else {
            client.status(contact).await
        };
        match reply {
            Ok((state, exit)) => Probe::Reported(state, exit),
            Err(e) => Probe::Unreachable(e.to_string()),
        }
    }

    /// Applies a probe to the stored record and returns the job's status.
    async fn record_probe(&self, job_id: &str, probe: Probe) -> JobStatus {
        let now = Utc::now();
        let (status, newly_done) = match probe {
            Probe::Reported(state, exit) => self
                .jobs
                .update(job_id, |r| {
                    let changed = r.observe(state, exit, now);
                    (JobStatus::of(r), changed && r.state == JobState::Done)
                })
                .unwrap_or_else(|| (JobStatus::unknown(job_id), false)),
            Probe::Unreachable(why) => {
                let status = self.jobs.update(job_id, |r| {
                    r.mark_stale(now);
                    let mut s = JobStatus::of(r);
                    s.error = Some(why);
                    s
                });
                (status.unwrap_or_else(|| JobStatus::unknown(job_id)), false)
            }
        };
        if newly_done {
            self.collect_outputs(job_id).await;
        }
        status
    }

    /// Reads the REGISTER manifest of a DONE job and records its replicas.
    async fn collect_outputs(&self, job_id: &str) {
        let Some(record) = self.jobs.get(job_id) else {
            return;
        };
        let Some(spec) = self.spec(&record.jobset_id) else {
            return;
        };
        let manifest = spec
            .results_uri(record.job_index)
            .join(MANIFEST_FILE)
            .expect("static segment");
        let entries: Vec<ManifestEntry> = match read_uri(&manifest).await {
            Ok(bytes) => match serde_json::from_slice(&bytes) {
                Ok(entries) => entries,
                Err(e) => {
                    tracing::warn!(%job_id, error = %e, "unreadable manifest");
                    return;
                }
            },
            Err(e) => {
                tracing::warn!(%job_id, error = %e, "manifest missing");
                return;
            }
        };
        if let Err(e) = self
            .catalog
            .register_many(entries.iter().map(|e| (e.logical_name.as_str(), &e.uri)))
        {
            tracing::error!(%job_id, error = %e, "replica registration failed");
        }
        self.jobs.update(job_id, |r| {
            r.output_uris = entries.into_iter().map(|e| e.uri).collect();
        });
    }

    /// Refreshes the listed jobs from their sites. Terminal jobs and jobs
    /// never acknowledged by a site are answered from the record alone.
    pub async fn poll_jobs(&self, job_ids: &[String]) -> Vec<JobStatus> {
        let _coalesce = self.poll_lock.lock().await;
        let polls = job_ids.iter().map(|id| async move {
            let Some(record) = self.jobs.get(id) else {
                return JobStatus::unknown(id);
            };
            if record.state.is_terminal() || record.contact.is_none() {
                return JobStatus::of(&record);
            }
            let probe = self.probe(&record, false).await;
            self.record_probe(id, probe).await
        });
        let out = join_all(polls).await;
        self.persist();
        out
    }

    /// Cancels the listed jobs. Terminal jobs are left as they are.
    pub async fn cancel_jobs(
        &self,
        job_ids: &[String],
        cred: &ProxyCredential,
    ) -> Result<Vec<JobStatus>, MonitorError> {
        match validate(cred, Utc::now()) {
            Validity::Valid => {}
            other => return Err(MonitorError::Auth(other)),
        }
        let cancels = job_ids.iter().map(|id| async move {
            let Some(record) = self.jobs.get(id) else {
                return JobStatus::unknown(id);
            };
            if record.state.is_terminal() || record.contact.is_none() {
                return JobStatus::of(&record);
            }
            let probe = self.probe(&record, true).await;
            self.record_probe(id, probe).await
        });
        let out = join_all(cancels).await;
        self.persist();
        Ok(out)
    }

    fn persist(&self) {
        if let Err(e) = self.jobs.persist() {
            tracing::error!(error = %e, "persisting job table failed");
        }
    }

    fn summary_cache(&self, jobset_id: &str) -> Arc<tokio::sync::Mutex<SummaryCache>> {
        self.summaries
            .lock()
            .unwrap()
            .entry(jobset_id.to_string())
            .or_default()
            .clone()
    }

    /// Folds the summaries of newly DONE jobs into the jobset's histogram.
    pub async fn update_summary(&self, jobset_id: &str) -> Result<DatasetSummary, MonitorError> {
        let spec = self.spec(jobset_id);
        let records = self.jobs.for_jobset(jobset_id);
        if records.is_empty() && spec.is_none() {
            return Err(MonitorError::UnknownJobset(jobset_id.to_string()));
        }
        let cache = self.summary_cache(jobset_id);
        let mut cache = cache.lock().await;
        let fresh: Vec<&JobRecord> = records
            .iter()
            .filter(|r| r.state == JobState::Done && !cache.per_job.contains_key(&r.job_index))
            .collect();
        let fetches = fresh.iter().map(|r| {
            let spec = spec.as_ref();
            async move {
                let Some(spec) = spec else {
                    return (r, None);
                };
                let uri = spec
                    .results_uri(r.job_index)
                    .join(SUMMARY_FILE)
                    .expect("static segment");
                let parsed = read_uri(&uri)
                    .await
                    .ok()
                    .and_then(|bytes| serde_json::from_slice::<SummaryFile>(&bytes).ok());
                (r, parsed)
            }
        });
        let mut missing = BTreeSet::new();
        for (record, summary) in join_all(fetches).await {
            match summary {
                Some(s) => {
                    cache.per_job.insert(record.job_index, s.histogram);
                }
                None => {
                    missing.insert(record.job_id.clone());
                }
            }
        }
        let mut histogram = Histogram::new();
        for h in cache.per_job.values() {
            merge_histograms(&mut histogram, h);
        }
        let jobs_total = spec.as_ref().map_or(records.len() as u32, |s| {
            s.job_count.max(records.len() as u32)
        });
        Ok(DatasetSummary {
            jobset_id: jobset_id.to_string(),
            histogram,
            jobs_done: cache.per_job.len() as u32,
            jobs_total,
            last_updated: Utc::now(),
            missing_results: missing.into_iter().collect(),
        })
    }

    /// One background round: poll every live job, then refresh summaries.
    pub async fn poll_round(&self) {
        let live: Vec<String> = self
            .jobs
            .all()
            .into_iter()
            .filter(|r| !r.state.is_terminal() && r.contact.is_some())
            .map(|r| r.job_id)
            .collect();
        if !live.is_empty() {
            self.poll_jobs(&live).await;
        }
        for jobset in self.tracked() {
            let _ = self.update_summary(&jobset).await;
        }
    }

    /// Runs [`poll_round`](Self::poll_round) every `interval` until aborted.
    pub fn spawn_poller(self: &Arc<Self>, interval: Duration) -> JoinHandle<()> {
        let this = self.clone();
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(interval);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                ticker.tick().await;
                this.poll_round().await;
            }
        })
    }
}
