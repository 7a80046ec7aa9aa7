//! Replica catalog: logical file names to physical grid locations.
//!
//! Append-only. Logical names follow `<jobset_id>/<job_index>/<filename>`.

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::model::{GridUri, Timestamp};
use crate::persist::{read_json, write_json_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaEntry {
    pub logical_name: String,
    pub physical: Vec<GridUri>,
    /// Registration time of each entry in `physical`, index-aligned.
    pub registered_at: Vec<Timestamp>,
}

#[derive(Default)]
struct CatalogData {
    entries: Vec<ReplicaEntry>,
    index: HashMap<String, usize>,
}

impl CatalogData {
    fn from_entries(entries: Vec<ReplicaEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.logical_name.clone(), i))
            .collect();
        CatalogData { entries, index }
    }

    fn register(
        &mut self,
        logical_name: &str,
        uri: &GridUri,
        now: Timestamp,
    ) -> (ReplicaEntry, bool) {
        let i = match self.index.get(logical_name) {
            Some(&i) => i,
            None => {
                self.entries.push(ReplicaEntry {
                    logical_name: logical_name.to_string(),
                    physical: Vec::new(),
                    registered_at: Vec::new(),
                });
                self.index
                    .insert(logical_name.to_string(), self.entries.len() - 1);
                self.entries.len() - 1
            }
        };
        let entry = &mut self.entries[i];
        let added = !entry.physical.contains(uri);
        if added {
            entry.physical.push(uri.clone());
            entry.registered_at.push(now);
        }
        (entry.clone(), added)
    }
}

/// In-process catalog, optionally persisted to a `replicas.json` file.
pub struct ReplicaCatalog {
    path: Option<PathBuf>,
    data: Mutex<CatalogData>,
}

impl ReplicaCatalog {
    pub fn in_memory() -> Self {
        ReplicaCatalog {
            path: None,
            data: Mutex::new(CatalogData::default()),
        }
    }

    /// Opens the catalog file, starting empty if it does not exist.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let entries: Vec<ReplicaEntry> = read_json(&path)?.unwrap_or_default();
        Ok(ReplicaCatalog {
            path: Some(path),
            data: Mutex::new(CatalogData::from_entries(entries)),
        })
    }

    fn persist(&self, data: &CatalogData) -> io::Result<()> {
        match &self.path {
            Some(path) => write_json_atomic(path, &data.entries),
            None => Ok(()),
        }
    }

    pub fn register_replica(&self, logical_name: &str, uri: &GridUri) -> io::Result<ReplicaEntry> {
        let mut data = self.data.lock().unwrap();
        let (entry, added) = data.register(logical_name, uri, Utc::now());
        if added {
            self.persist(&data)?;
        }
        Ok(entry)
    }

    /// Registers several replicas with a single write.
    pub fn register_many<'a>(
        &self,
        items: impl IntoIterator<Item = (&'a str, &'a GridUri)>,
    ) -> io::Result<()> {
        let mut data = self.data.lock().unwrap();
        let now = Utc::now();
        let mut changed = false;
        for (name, uri) in items {
            changed |= data.register(name, uri, now).1;
        }
        if changed {
            self.persist(&data)?;
        }
        Ok(())
    }

    /// Physical locations of `logical_name` in registration order.
    pub fn lookup_replica(&self, logical_name: &str) -> Vec<GridUri> {
        let data = self.data.lock().unwrap();
        data.index
            .get(logical_name)
            .map(|&i| data.entries[i].physical.clone())
            .unwrap_or_default()
    }

    pub fn entry(&self, logical_name: &str) -> Option<ReplicaEntry> {
        let data = self.data.lock().unwrap();
        data.index
            .get(logical_name)
            .map(|&i| data.entries[i].clone())
    }

    /// Entries whose logical name starts with `prefix`.
    pub fn entries_with_prefix(&self, prefix: &str) -> Vec<ReplicaEntry> {
        let data = self.data.lock().unwrap();
        data.entries
            .iter()
            .filter(|e| e.logical_name.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.data.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_grid_uri;

    fn u(s: &str) -> GridUri {
        parse_grid_uri(s).unwrap()
    }

    #[test]
    fn register_and_lookup() {
        let cat = ReplicaCatalog::in_memory();
        assert!(cat.lookup_replica("run1/out.0").is_empty());
        let u1 = u("gsiftp://a/r/out.0");
        let u2 = u("file:///mirror/out.0");
        assert_eq!(
            cat.register_replica("run1/out.0", &u1).unwrap().physical,
            vec![u1.clone()]
        );
        assert_eq!(
            cat.register_replica("run1/out.0", &u1).unwrap().physical,
            vec![u1.clone()]
        );
        let entry = cat.register_replica("run1/out.0", &u2).unwrap();
        assert_eq!(entry.physical, vec![u1.clone(), u2.clone()]);
        assert_eq!(entry.registered_at.len(), 2);
        assert_eq!(cat.lookup_replica("run1/out.0"), vec![u1, u2]);
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replicas.json");
        let cat = ReplicaCatalog::open(&path).unwrap();
        let u1 = u("gsiftp://a/r/x");
        let u2 = u("gsiftp://b/r/x");
        cat.register_many([("js/0/x", &u1), ("js/0/x", &u2), ("js/1/x", &u1)])
            .unwrap();
        let before = cat.lookup_replica("js/0/x");
        drop(cat);
        let reopened = ReplicaCatalog::open(&path).unwrap();
        assert_eq!(reopened.lookup_replica("js/0/x"), before);
        assert_eq!(reopened.entries_with_prefix("js/").len(), 2);
    }
}
