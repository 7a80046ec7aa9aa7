//! Authoritative portal-side job records.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use crate::model::JobRecord;
use crate::persist::{read_json, write_json_atomic};

pub struct JobTable {
    path: Option<PathBuf>,
    jobs: Mutex<BTreeMap<(String, u32), JobRecord>>,
    by_id: Mutex<BTreeMap<String, (String, u32)>>,
    persist_lock: Mutex<()>,
}

impl JobTable {
    pub fn in_memory() -> Self {
        JobTable {
            path: None,
            jobs: Mutex::new(BTreeMap::new()),
            by_id: Mutex::new(BTreeMap::new()),
            persist_lock: Mutex::new(()),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let records: Vec<JobRecord> = read_json(&path)?.unwrap_or_default();
        let table = JobTable {
            path: Some(path),
            ..Self::in_memory()
        };
        table.insert_all(records);
        Ok(table)
    }

    pub fn insert_all(&self, records: impl IntoIterator<Item = JobRecord>) {
        let mut jobs = self.jobs.lock().unwrap();
        let mut ids = self.by_id.lock().unwrap();
        for rec in records {
            let key = (rec.jobset_id.clone(), rec.job_index);
            ids.insert(rec.job_id.clone(), key.clone());
            jobs.insert(key, rec);
        }
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        let key = self.by_id.lock().unwrap().get(job_id).cloned()?;
        self.jobs.lock().unwrap().get(&key).cloned()
    }

    pub fn contains(&self, job_id: &str) -> bool {
        self.by_id.lock().unwrap().contains_key(job_id)
    }

    /// Runs `edit` on one record under the table lock.
    pub fn update<R>(&self, job_id: &str, edit: impl FnOnce(&mut JobRecord) -> R) -> Option<R> {
        let key = self.by_id.lock().unwrap().get(job_id).cloned()?;
        let mut jobs = self.jobs.lock().unwrap();
        jobs.get_mut(&key).map(edit)
    }

    /// Records of one jobset, ordered by job index.
    pub fn for_jobset(&self, jobset_id: &str) -> Vec<JobRecord> {
        let jobs = self.jobs.lock().unwrap();
        jobs.range((jobset_id.to_string(), 0)..=(jobset_id.to_string(), u32::MAX))
            .map(|(_, r)| r.clone())
            .collect()
    }

    pub fn all(&self) -> Vec<JobRecord> {
        self.jobs.lock().unwrap().values().cloned().collect()
    }

    pub fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let _guard = self.persist_lock.lock().unwrap();
        let snapshot = self.all();
        write_json_atomic(path, &snapshot)
    }
}
