//! Resource database: registered compute sites, availability probes and
//! named active sets. Persisted as one JSON file replaced atomically on
//! every write.

use std::collections::HashSet;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::{validate, ProxyCredential, Validity};
use crate::fabric::JobManagerKind;
use crate::model::{Timestamp, ValidationError};
use crate::persist::{read_json, write_json_atomic};
use crate::wire::{FileServerClient, JobManagerClient};

pub const PROBE_TIMEOUT: Duration = Duration::from_secs(5);

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    pub first: u16,
    pub last: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub site_id: String,
    pub os: String,
    pub runtime_version: String,
    pub cpu_count: u32,
    #[serde(default = "default_speed")]
    pub speed_factor: f64,
    /// Stored and shown only; nothing enforces it.
    #[serde(default)]
    pub firewall_ports: Option<PortRange>,
    pub jobmanager_kind: JobManagerKind,
    /// `host:port/service`
    pub jobmanager_contact: String,
    /// `host:port`
    pub fileserver_contact: String,
    #[serde(default)]
    pub app_install_path: Option<String>,
}

impl ResourceRecord {
    /// Relative computing power: `cpu_count × speed_factor`.
    pub fn power(&self) -> f64 {
        f64::from(self.cpu_count) * self.speed_factor
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.site_id.is_empty()
            || !self
                .site_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(ValidationError::new(
                "site_id",
                "must be non-empty [A-Za-z0-9._-]",
            ));
        }
        if self.cpu_count == 0 {
            return Err(ValidationError::new("cpu_count", "must be at least 1"));
        }
        if !(self.speed_factor > 0.0 && self.speed_factor.is_finite()) {
            return Err(ValidationError::new(
                "speed_factor",
                "must be a positive number",
            ));
        }
        if let Some(range) = self.firewall_ports {
            if range.first == 0 || range.first > range.last {
                return Err(ValidationError::new(
                    "firewall_ports",
                    "must be an ordered range within 1-65535",
                ));
            }
        }
        for (field, contact) in [
            ("jobmanager_contact", &self.jobmanager_contact),
            ("fileserver_contact", &self.fileserver_contact),
        ] {
            let addr = crate::wire::endpoint_address(contact);
            let ok = addr
                .rsplit_once(':')
                .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok_and(|p| p > 0));
            if !ok || contact.contains(char::is_whitespace) {
                return Err(ValidationError::new(
                    field,
                    "must look like host:port[/service]",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub name: String,
    pub site_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityReport {
    pub site_id: String,
    pub auth_ok: bool,
    pub jobmanager_ok: bool,
    pub fileserver_ok: bool,
    pub probed_at: Timestamp,
}

impl AvailabilityReport {
    pub fn all_ok(&self) -> bool {
        self.auth_ok && self.jobmanager_ok && self.fileserver_ok
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("active set must name at least one site")]
    EmptySet,
    #[error("unknown active set {0}")]
    UnknownActiveSet(String),
    #[error("registry persistence failed: {0}")]
    Io(#[from] io::Error),
}

/// On-disk layout of `registry.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryData {
    pub resources: Vec<ResourceRecord>,
    pub active_sets: Vec<ActiveSet>,
}

impl RegistryData {
    pub fn resource(&self, site_id: &str) -> Option<&ResourceRecord> {
        self.resources.iter().find(|r| r.site_id == site_id)
    }

    pub fn active_set(&self, name: &str) -> Option<&ActiveSet> {
        self.active_sets.iter().find(|s| s.name == name)
    }
}

pub struct Registry {
    path: Option<PathBuf>,
    current: RwLock<Arc<RegistryData>>,
    writer: Mutex<()>,
    probe_timeout: Duration,
}

impl Registry {
    pub fn in_memory() -> Self {
        Self::with_data(None, RegistryData::default())
    }

    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let data = read_json(&path)?.unwrap_or_default();
        Ok(Self::with_data(Some(path), data))
    }

    fn with_data(path: Option<PathBuf>, data: RegistryData) -> Self {
        Registry {
            path,
            current: RwLock::new(Arc::new(data)),
            writer: Mutex::new(()),
            probe_timeout: PROBE_TIMEOUT,
        }
    }

    pub fn with_probe_timeout(mut self, limit: Duration) -> Self {
        self.probe_timeout = limit;
        self
    }

    /// Consistent read-only view.
    pub fn snapshot(&self) -> Arc<RegistryData> {
        self.current.read().unwrap().clone()
    }

    /// Applies `edit` to a copy, persists it, then publishes it to readers.
    fn write<T>(
        &self,
        edit: impl FnOnce(&mut RegistryData) -> Result<T, RegistryError>,
    ) -> Result<T, RegistryError> {
        let _guard = self.writer.lock().unwrap();
        let mut next = (*self.snapshot()).clone();
        let out = edit(&mut next)?;
        if let Some(path) = &self.path {
            write_json_atomic(path, &next)?;
        }
        *self.current.write().unwrap() = Arc::new(next);
        Ok(out)
    }

    pub fn upsert_resource(&self, record: ResourceRecord) -> Result<String, RegistryError> {
        record.validate()?;
        self.write(|data| {
            let id = record.site_id.clone();
            match data.resources.iter_mut().find(|r| r.site_id == id) {
                Some(slot) => *slot = record,
                None => data.resources.push(record),
            }
            Ok(id)
        })
    }

    /// Removes a site. Active sets naming it become stale.
    pub fn remove_resource(&self, site_id: &str) -> Result<ResourceRecord, RegistryError> {
        self.write(|data| {
            let i = data
                .resources
                .iter()
                .position(|r| r.site_id == site_id)
                .ok_or_else(|| RegistryError::UnknownSite(site_id.to_string()))?;
            Ok(data.resources.remove(i))
        })
    }

    pub fn get(&self, site_id: &str) -> Option<ResourceRecord> {
        self.snapshot().resource(site_id).cloned()
    }

    pub fn resources(&self) -> Vec<ResourceRecord> {
        self.snapshot().resources.clone()
    }

    pub fn define_active_set(
        &self,
        name: &str,
        site_ids: &[String],
    ) -> Result<ActiveSet, RegistryError> {
        if name.is_empty() {
            return Err(ValidationError::new("name", "must be non-empty").into());
        }
        if site_ids.is_empty() {
            return Err(RegistryError::EmptySet);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = site_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(ValidationError::new("site_ids", format!("duplicate site {dup}")).into());
        }
        self.write(|data| {
            if let Some(missing) = site_ids.iter().find(|id| data.resource(id).is_none()) {
                return Err(RegistryError::UnknownSite(missing.clone()));
            }
            let set = ActiveSet {
                name: name.to_string(),
                site_ids: site_ids.to_vec(),
            };
            match data.active_sets.iter_mut().find(|s| s.name == name) {
                Some(slot) => *slot = set.clone(),
                None => data.active_sets.push(set.clone()),
            }
            Ok(set)
        })
    }

    pub fn active_set(&self, name: &str) -> Result<ActiveSet, RegistryError> {
        self.snapshot()
            .active_set(name)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownActiveSet(name.to_string()))
    }

    pub fn active_sets(&self) -> Vec<ActiveSet> {
        self.snapshot().active_sets.clone()
    }

    /// Checks the credential and pings both site endpoints. Never mutates the
    /// registry.
    pub async fn test_availability(
        &self,
        site_id: &str,
        cred: &ProxyCredential,
    ) -> Result<AvailabilityReport, RegistryError> {
        let record = self
            .get(site_id)
            .ok_or_else(|| RegistryError::UnknownSite(site_id.to_string()))?;
        let auth_ok = validate(cred, Utc::now()) == Validity::Valid;
        let jm = JobManagerClient::new(&record.jobmanager_contact, self.probe_timeout);
        let fs = FileServerClient::new(&record.fileserver_contact, self.probe_timeout);
        let (jm_res, fs_res) = tokio::join!(jm.ping(), fs.ping());
        Ok(AvailabilityReport {
            site_id: record.site_id,
            auth_ok,
            jobmanager_ok: jm_res.is_ok(),
            fileserver_ok: fs_res.is_ok(),
            probed_at: Utc::now(),
        })
    }

    /// Probes every site concurrently; one dead site does not hold up the rest
    /// beyond its own timeout.
    pub async fn test_all(&self, cred: &ProxyCredential) -> Vec<AvailabilityReport> {
        let ids: Vec<String> = self.resources().into_iter().map(|r| r.site_id).collect();
        let probes = ids.iter().map(|id| self.test_availability(id, cred));
        futures::future::join_all(probes)
            .await
            .into_iter()
            .flatten()
            .collect()
    }
}
