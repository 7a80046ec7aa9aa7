//! Append-only submission archive.

use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dispatcher::SubmissionPlan;
use crate::model::{JobsetSpec, Timestamp};
use crate::persist::{read_json, write_json_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub jobset_id: String,
    pub spec: JobsetSpec,
    pub plan: SubmissionPlan,
    pub submitted_at: Timestamp,
    pub job_ids: Vec<String>,
}

pub struct Archive {
    path: Option<PathBuf>,
    entries: Mutex<Vec<ArchiveEntry>>,
}

impl Archive {
    pub fn in_memory() -> Self {
        Archive {
            path: None,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let entries = read_json(&path)?.unwrap_or_default();
        Ok(Archive {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    /// Generated ids look like `js-000001`; the counter continues after the
    /// highest one already archived.
    fn next_id(entries: &[ArchiveEntry]) -> String {
        let mut n = entries
            .iter()
            .filter_map(|e| e.jobset_id.strip_prefix("js-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        loop {
            n += 1;
            let id = format!("js-{n:06}");
            if !entries.iter().any(|e| e.jobset_id == id) {
                return id;
            }
        }
    }

    /// Appends the entry built for a freshly reserved id, atomically with
    /// respect to other appends. The id is `requested` when non-empty and
    /// unused, a generated one when `requested` is empty. Returns `None` if
    /// `requested` is already archived; nothing is stored if `build` fails.
    pub fn append_with<E: From<io::Error>>(
        &self,
        requested: &str,
        build: impl FnOnce(&str) -> Result<ArchiveEntry, E>,
    ) -> Result<Option<ArchiveEntry>, E> {
        let mut entries = self.entries.lock().unwrap();
        let id = if requested.is_empty() {
            Self::next_id(&entries)
        } else if entries.iter().any(|e| e.jobset_id == requested) {
            return Ok(None);
        } else {
            requested.to_string()
        };
        let entry = build(&id)?;
        entries.push(entry.clone());
        if let Some(path) = &self.path {
            if let Err(e) = write_json_atomic(path, &*entries) {
                entries.pop();
                return Err(e.into());
            }
        }
        Ok(Some(entry))
    }

    pub fn get(&self, jobset_id: &str) -> Option<ArchiveEntry> {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .find(|e| e.jobset_id == jobset_id)
            .cloned()
    }

    pub fn list(&self) -> Vec<ArchiveEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn contains(&self, jobset_id: &str) -> bool {
        self.get(jobset_id).is_some()
    }
}
