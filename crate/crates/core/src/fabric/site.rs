//! A site job-manager: bounded queue, CPU slots and the GRAM-style reporter.
//!
//! The job table is one synchronized state machine. Submit, status and cancel
//! serialize against it; every state change goes through
//! [`transition`](crate::model::transition).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{Duration as ChronoDuration, Utc};
use tokio::sync::{watch, Semaphore};

use crate::checksum::{checksum_hex, fnv1a64};
use crate::credential::{validate, ProxyCredential, Validity};
use crate::dispatcher::jdl::{description_to_request, parse_broker_description};
use crate::fabric::wrapper::{remove_workdir, run_wrapper, WrapperContext};
use crate::fabric::{JobManagerKind, SiteConfig, WrapperPhase, WrapperRequest};
use crate::model::{transition, JobEvent, JobState, Timestamp};
use crate::staging::toolcache::is_installed;
use crate::wire::{ErrorCode, WireError};

struct JobEntry {
    history: Vec<(Timestamp, JobState)>,
    exit_code: Option<i32>,
    state_tx: watch::Sender<JobState>,
    cancel_tx: watch::Sender<bool>,
    workdir: PathBuf,
    phases: Arc<Mutex<Vec<WrapperPhase>>>,
    failed_phase: Option<WrapperPhase>,
}

impl JobEntry {
    fn state(&self) -> JobState {
        *self.state_tx.borrow()
    }

    fn reported_exit(&self) -> Option<i32> {
        match self.state() {
            JobState::Done | JobState::Failed => self.exit_code,
            _ => None,
        }
    }
}

#[derive(Default)]
struct JobTable {
    jobs: HashMap<String, JobEntry>,
    pending: usize,
    active: usize,
    max_active: usize,
}

impl JobTable {
    /// Applies `event` to `contact`, keeping the slot counters in step.
    fn apply(&mut self, contact: &str, event: JobEvent) -> Option<JobState> {
        let entry = self.jobs.get_mut(contact)?;
        let from = entry.state();
        let to = match transition(from, event) {
            Ok(to) => to,
            Err(e) => {
                tracing::error!(%contact, error = %e, "rejected site transition");
                return None;
            }
        };
        let now = Utc::now();
        let now = entry.history.last().map_or(now, |(t, _)| now.max(*t));
        entry.history.push((now, to));
        if let JobEvent::Complete { exit_code } = event {
            entry.exit_code = Some(exit_code);
        }
        entry.state_tx.send_replace(to);
        match from {
            JobState::Pending => self.pending -= 1,
            JobState::Active => self.active -= 1,
            _ => {}
        }
        match to {
            JobState::Pending => self.pending += 1,
            JobState::Active => {
                self.active += 1;
                self.max_active = self.max_active.max(self.active);
            }
            _ => {}
        }
        Some(to)
    }
}

pub struct Site {
    config: SiteConfig,
    base_dir: PathBuf,
    slots: Arc<Semaphore>,
    table: Mutex<JobTable>,
    next_seq: AtomicU64,
    host_credential: ProxyCredential,
    file_puts: AtomicU64,
}

fn unknown(contact: &str) -> WireError {
    WireError::new(ErrorCode::UnknownContact, format!("no job {contact}"))
}

impl Site {
    /// Creates the site state. `base_dir` must already exist.
    pub fn new(config: SiteConfig) -> std::io::Result<Arc<Self>> {
        let base_dir = std::fs::canonicalize(&config.base_dir)?;
        let host_credential = ProxyCredential::root(
            format!("CN=host/{}", config.site_id),
            Utc::now() + ChronoDuration::days(365),
            checksum_hex(format!("{}:{}", config.site_id, base_dir.display()).as_bytes()),
        );
        Ok(Arc::new(Site {
            slots: Arc::new(Semaphore::new(config.slots())),
            base_dir,
            config,
            table: Mutex::new(JobTable::default()),
            next_seq: AtomicU64::new(1),
            host_credential,
            file_puts: AtomicU64::new(0),
        }))
    }

    pub fn config(&self) -> &SiteConfig {
        &self.config
    }

    pub fn site_id(&self) -> &str {
        &self.config.site_id
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Fault injection decision for job `seq`, fixed per (site, seq).
    fn inject_failure(&self, seq: u64) -> bool {
        if self.config.failure_rate <= 0.0 {
            return false;
        }
        let mut key = self.config.site_id.as_bytes().to_vec();
        key.extend_from_slice(&seq.to_le_bytes());
        let u = (fnv1a64(&key) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.config.failure_rate
    }

    pub fn gram_submit(
        self: &Arc<Self>,
        request: WrapperRequest,
        credential: ProxyCredential,
    ) -> Result<String, WireError> {
        match validate(&credential, Utc::now()) {
            Validity::Valid => {}
            other => {
                return Err(WireError::new(
                    ErrorCode::Auth,
                    format!("credential rejected: {other:?}"),
                ))
            }
        }
        if let Some(req) = &request.toolcache {
            if !is_installed(&self.base_dir, req) {
                return Err(WireError::new(
                    ErrorCode::CacheMissing,
                    format!("tool cache {}/{} not installed", req.name, req.version),
                ));
            }
        }
        let seq = self.next_seq.fetch_add(1, Ordering::SeqCst);
        let contact = format!("{}-{seq:06}", self.config.site_id);
        let workdir = self.base_dir.join("jobs").join(&contact);
        let phases = Arc::new(Mutex::new(Vec::new()));
        let (cancel_tx, cancel_rx) = watch::channel(false);
        {
            let mut table = self.table.lock().unwrap();
            if table.pending >= self.config.queue_limit {
                return Err(WireError::new(ErrorCode::QueueFull, "job queue is full"));
            }
            let now = Utc::now();
            table.jobs.insert(
                contact.clone(),
                JobEntry {
                    history: vec![(now, JobState::Unsubmitted)],
                    exit_code: None,
                    state_tx: watch::Sender::new(JobState::Unsubmitted),
                    cancel_tx,
                    workdir: workdir.clone(),
                    phases: phases.clone(),
                    failed_phase: None,
                },
            );
            table.apply(&contact, JobEvent::Submit);
        }
        let ctx = WrapperContext {
            request,
            credential,
            workdir,
            seconds_per_event: self.config.seconds_per_event,
            inject_failure: self.inject_failure(seq),
            phase_log: phases,
        };
        tokio::spawn(self.clone().drive(contact.clone(), ctx, cancel_rx));
        Ok(contact)
    }

    /// Accepts a job description and queues it on the broker's own slots.
    /// Without a delegated credential the broker runs the job under its host
    /// credential.
    pub fn broker_accept(
        self: &Arc<Self>,
        document: &str,
        credential: Option<ProxyCredential>,
    ) -> Result<String, WireError> {
        if self.config.jobmanager_kind != JobManagerKind::Broker {
            return Err(WireError::new(
                ErrorCode::BadRequest,
                "site is not a broker",
            ));
        }
        let malformed = |e: String| WireError::new(ErrorCode::MalformedDescription, e);
        let fields = parse_broker_description(document).map_err(|e| malformed(e.to_string()))?;
        let request = description_to_request(&fields).map_err(|e| malformed(e.to_string()))?;
        let credential = credential.unwrap_or_else(|| self.host_credential.clone());
        self.gram_submit(request, credential)
    }

    async fn drive(
        self: Arc<Self>,
        contact: String,
        ctx: WrapperContext,
        mut cancel_rx: watch::Receiver<bool>,
    ) {
        let permit = tokio::select! {
            biased;
            _ = cancel_rx.wait_for(|c| *c) => None,
            permit = self.slots.clone().acquire_owned() => permit.ok(),
        };
        let scheduled = permit.is_some() && {
            let mut table = self.table.lock().unwrap();
            let canceled = table
                .jobs
                .get(&contact)
                .is_some_and(|e| *e.cancel_tx.borrow());
            !canceled && table.apply(&contact, JobEvent::Schedule).is_some()
        };
        if !scheduled {
            self.finish_canceled(&contact, &ctx.workdir).await;
            return;
        }
        let outcome = tokio::select! {
            biased;
            _ = cancel_rx.wait_for(|c| *c) => None,
            outcome = run_wrapper(&ctx) => Some(outcome),
        };
        match outcome {
            Some(outcome) => {
                let mut table = self.table.lock().unwrap();
                if let Some(entry) = table.jobs.get_mut(&contact) {
                    entry.failed_phase = outcome.failed_phase;
                }
                table.apply(
                    &contact,
                    JobEvent::Complete {
                        exit_code: outcome.exit_code,
                    },
                );
            }
            None => {
                ctx.phase_log.lock().unwrap().push(WrapperPhase::Cleanup);
                self.finish_canceled(&contact, &ctx.workdir).await;
            }
        }
        drop(permit);
    }

    async fn finish_canceled(&self, contact: &str, workdir: &Path) {
        remove_workdir(workdir).await;
        self.table.lock().unwrap().apply(contact, JobEvent::Cancel);
    }

    pub fn gram_status(&self, contact: &str) -> Result<(JobState, Option<i32>), WireError> {
        let table = self.table.lock().unwrap();
        let entry = table.jobs.get(contact).ok_or_else(|| unknown(contact))?;
        Ok((entry.state(), entry.reported_exit()))
    }

    /// Cancels a queued or running job and waits until it is gone. Terminal
    /// jobs are returned unchanged.
    pub async fn gram_cancel(&self, contact: &str) -> Result<(JobState, Option<i32>), WireError> {
        let mut state_rx = {
            let table = self.table.lock().unwrap();
            let entry = table.jobs.get(contact).ok_or_else(|| unknown(contact))?;
            if entry.state().is_terminal() {
                return Ok((entry.state(), entry.reported_exit()));
            }
            entry.cancel_tx.send_replace(true);
            entry.state_tx.subscribe()
        };
        let _ = state_rx.wait_for(|s| s.is_terminal()).await;
        self.gram_status(contact)
    }

    /// Waits until the job reaches a terminal state.
    pub async fn wait_terminal(&self, contact: &str) -> Result<JobState, WireError> {
        let mut rx = {
            let table = self.table.lock().unwrap();
            table
                .jobs
                .get(contact)
                .ok_or_else(|| unknown(contact))?
                .state_tx
                .subscribe()
        };
        let state = *rx
            .wait_for(|s| s.is_terminal())
            .await
            .expect("sender lives in the table");
        Ok(state)
    }

    /// Full state history of a job as recorded by the site.
    pub fn history(&self, contact: &str) -> Option<Vec<(Timestamp, JobState)>> {
        self.table
            .lock()
            .unwrap()
            .jobs
            .get(contact)
            .map(|e| e.history.clone())
    }

    pub fn phases(&self, contact: &str) -> Vec<WrapperPhase> {
        let table = self.table.lock().unwrap();
        table
            .jobs
            .get(contact)
            .map(|e| e.phases.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn failed_phase(&self, contact: &str) -> Option<WrapperPhase> {
        self.table
            .lock()
            .unwrap()
            .jobs
            .get(contact)
            .and_then(|e| e.failed_phase)
    }

    pub fn workdir(&self, contact: &str) -> Option<PathBuf> {
        self.table
            .lock()
            .unwrap()
            .jobs
            .get(contact)
            .map(|e| e.workdir.clone())
    }

    pub fn contacts(&self) -> Vec<String> {
        let mut out: Vec<String> = self.table.lock().unwrap().jobs.keys().cloned().collect();
        out.sort();
        out
    }

    pub fn active_now(&self) -> usize {
        self.table.lock().unwrap().active
    }

    /// Highest number of simultaneously ACTIVE jobs seen so far.
    pub fn max_active(&self) -> usize {
        self.table.lock().unwrap().max_active
    }

    pub(crate) fn count_put(&self) {
        self.file_puts.fetch_add(1, Ordering::SeqCst);
    }

    /// PUT requests served by this site's file server.
    pub fn file_puts(&self) -> u64 {
        self.file_puts.load(Ordering::SeqCst)
    }
}
