//! Idempotent deployment of the portal tool bundle onto compute sites.
//!
//! Site layout, relative to the site file-server root:
//! `/toolcache/<name>/<version>/<payload file>` plus a `.checksum` marker
//! written after the payload. A version counts as installed once its
//! marker holds the bundle checksum; the active version is the greatest one
//! installed.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checksum::checksum_hex;
use crate::credential::{validate, ProxyCredential, Validity};
use crate::fabric::ToolRequirement;
use crate::model::{GridUri, Scheme};
use crate::registry::Registry;
use crate::staging::transfer::{read_uri, write_uri, TransferError};
use crate::wire::endpoint_address;

pub const TOOLCACHE_DIR: &str = "toolcache";
pub const CHECKSUM_MARKER: &str = ".checksum";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolBundle {
    pub name: String,
    pub version: String,
    pub payload_uri: GridUri,
    pub checksum: String,
}

impl ToolBundle {
    /// Reads the payload once to fill in its checksum.
    pub async fn from_payload(
        name: &str,
        version: &str,
        payload_uri: GridUri,
    ) -> Result<Self, TransferError> {
        let bytes = read_uri(&payload_uri).await?;
        Ok(ToolBundle {
            name: name.to_string(),
            version: version.to_string(),
            payload_uri,
            checksum: checksum_hex(&bytes),
        })
    }

    pub fn requirement(&self) -> ToolRequirement {
        ToolRequirement {
            name: self.name.clone(),
            version: self.version.clone(),
        }
    }

    fn payload_name(&self) -> &str {
        self.payload_uri.file_name().unwrap_or("payload")
    }
}

/// Compares dotted versions component by component. Numeric components compare
/// numerically and sort before alphanumeric ones, which compare as strings.
/// Missing components count as `0`, so `1.0` equals `1.0.0`.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let mut left = a.split('.');
    let mut right = b.split('.');
    loop {
        match (left.next(), right.next()) {
            (None, None) => return Ordering::Equal,
            (l, r) => {
                let l = l.unwrap_or("0");
                let r = r.unwrap_or("0");
                let ord = match (l.parse::<u64>(), r.parse::<u64>()) {
                    (Ok(x), Ok(y)) => x.cmp(&y),
                    (Ok(_), Err(_)) => Ordering::Less,
                    (Err(_), Ok(_)) => Ordering::Greater,
                    (Err(_), Err(_)) => l.cmp(r),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

/// Greatest installed version of `name` under a site's local `base_dir`.
pub fn installed_versions(base_dir: &Path, name: &str) -> Vec<String> {
    let dir = base_dir.join(TOOLCACHE_DIR).join(name);
    let mut versions: Vec<String> = std::fs::read_dir(&dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().join(CHECKSUM_MARKER).is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    versions.sort_by(|a, b| compare_versions(a, b));
    versions
}

pub fn active_version(base_dir: &Path, name: &str) -> Option<String> {
    installed_versions(base_dir, name).pop()
}

/// Whether `req` is installed under `base_dir`.
pub fn is_installed(base_dir: &Path, req: &ToolRequirement) -> bool {
    base_dir
        .join(TOOLCACHE_DIR)
        .join(&req.name)
        .join(&req.version)
        .join(CHECKSUM_MARKER)
        .is_file()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheOutcome {
    Fresh,
    Updated,
}

#[derive(Debug, Error)]
pub enum ToolCacheError {
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("credential rejected: {0:?}")]
    Auth(Validity),
    #[error("site cache unreachable: {0}")]
    DestinationUnreachable(String),
    #[error("bundle checksum mismatch: expected {expected}, payload has {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}

type GuardKey = (String, String, String);

/// Deploys tool bundles to registered sites, one transfer per
/// (site, name, version).
pub struct ToolCacheDeployer {
    registry: Arc<Registry>,
    guards: Mutex<HashMap<GuardKey, Arc<tokio::sync::Mutex<()>>>>,
    payload_transfers: AtomicU64,
}

impl ToolCacheDeployer {
    pub fn new(registry: Arc<Registry>) -> Self {
        ToolCacheDeployer {
            registry,
            guards: Mutex::new(HashMap::new()),
            payload_transfers: AtomicU64::new(0),
        }
    }

    /// Number of payload uploads performed so far.
    pub fn payload_transfers(&self) -> u64 {
        self.payload_transfers.load(AtomicOrdering::SeqCst)
    }

    fn guard(&self, key: GuardKey) -> Arc<tokio::sync::Mutex<()>> {
        self.guards.lock().unwrap().entry(key).or_default().clone()
    }

    pub async fn ensure_toolcache(
        &self,
        site_id: &str,
        bundle: &ToolBundle,
        cred: &ProxyCredential,
    ) -> Result<CacheOutcome, ToolCacheError> {
        match validate(cred, Utc::now()) {
            Validity::Valid => {}
            other => return Err(ToolCacheError::Auth(other)),
        }
        let record = self
            .registry
            .get(site_id)
            .ok_or_else(|| ToolCacheError::UnknownSite(site_id.to_string()))?;
        let unreachable = |e: TransferError| ToolCacheError::DestinationUnreachable(e.to_string());
        let authority = endpoint_address(&record.fileserver_contact);
        let (host, port) = authority
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h, p.parse::<u16>().ok()?)))
            .ok_or_else(|| {
                ToolCacheError::DestinationUnreachable(format!("bad contact {authority}"))
            })?;
        let version_dir = GridUri::new(
            Scheme::Gsiftp,
            host,
            Some(port),
            format!("/{TOOLCACHE_DIR}/{}/{}/", bundle.name, bundle.version),
        )
        .map_err(|e| ToolCacheError::DestinationUnreachable(e.to_string()))?;
        let marker = version_dir.join(CHECKSUM_MARKER).expect("static segment");
        let payload_dst = version_dir
            .join(bundle.payload_name())
            .map_err(|e| ToolCacheError::DestinationUnreachable(e.to_string()))?;

        let guard = self.guard((
            site_id.to_string(),
            bundle.name.clone(),
            bundle.version.clone(),
        ));
        let _held = guard.lock().await;

        if let Ok(existing) = read_uri(&marker).await {
            if existing == bundle.checksum.as_bytes() {
                return Ok(CacheOutcome::Fresh);
            }
        }
        let payload = read_uri(&bundle.payload_uri).await.map_err(unreachable)?;
        let actual = checksum_hex(&payload);
        if actual != bundle.checksum {
            return Err(ToolCacheError::ChecksumMismatch {
                expected: bundle.checksum.clone(),
                actual,
            });
        }
        write_uri(&payload_dst, &payload)
            .await
            .map_err(unreachable)?;
        self.payload_transfers.fetch_add(1, AtomicOrdering::SeqCst);
        write_uri(&marker, bundle.checksum.as_bytes())
            .await
            .map_err(unreachable)?;
        Ok(CacheOutcome::Updated)
    }
}
