//! URI-addressed file movement.
//!
//! `file` URIs use the local filesystem, `gsiftp` URIs the site file-server
//! protocol and `http` URIs a plain GET (read-only).

use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::credential::{validate, ProxyCredential, Validity};
use crate::model::{GridUri, Scheme};
use crate::wire::{ErrorCode, FileServerClient, RpcError};

pub const TRANSFER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("credential rejected: {0:?}")]
    Auth(Validity),
    #[error("source {0} is missing: {1}")]
    SourceMissing(String, String),
    #[error("destination {0} unreachable: {1}")]
    DestinationUnreachable(String, String),
}

fn local_path(uri: &GridUri) -> PathBuf {
    PathBuf::from(uri.path())
}

fn fileserver(uri: &GridUri) -> FileServerClient {
    FileServerClient::new(
        &uri.authority().expect("network scheme has an authority"),
        TRANSFER_TIMEOUT,
    )
}

/// Reads the full content of `uri`.
pub async fn read_uri(uri: &GridUri) -> Result<Vec<u8>, TransferError> {
    let missing = |why: String| TransferError::SourceMissing(uri.to_string(), why);
    match uri.scheme() {
        Scheme::File => tokio::fs::read(local_path(uri))
            .await
            .map_err(|e| missing(e.to_string())),
        Scheme::Gsiftp => fileserver(uri)
            .get(uri.path())
            .await
            .map_err(|e| missing(e.to_string())),
        Scheme::Http => {
            let resp = reqwest::get(uri.to_string())
                .await
                .map_err(|e| missing(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(missing(format!("HTTP {}", resp.status())));
            }
            resp.bytes()
                .await
                .map(|b| b.to_vec())
                .map_err(|e| missing(e.to_string()))
        }
    }
}

/// Writes `bytes` to a local path via a temp file so readers never see a
/// partial file.
pub async fn write_local_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        tokio::fs::create_dir_all(parent).await?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path names a directory"))?;
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let tmp = path.with_file_name(format!(
        ".{}.{}-{}.part",
        name.to_string_lossy(),
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    tokio::fs::write(&tmp, bytes).await?;
    tokio::fs::rename(&tmp, path).await
}

/// Writes `bytes` to `uri`, creating parent directories.
pub async fn write_uri(uri: &GridUri, bytes: &[u8]) -> Result<(), TransferError> {
    let unreachable = |why: String| TransferError::DestinationUnreachable(uri.to_string(), why);
    if uri.path().ends_with('/') {
        return Err(unreachable("destination names a directory".into()));
    }
    match uri.scheme() {
        Scheme::File => write_local_atomic(&local_path(uri), bytes)
            .await
            .map_err(|e| unreachable(e.to_string())),
        Scheme::Gsiftp => fileserver(uri)
            .put(uri.path(), bytes)
            .await
            .map_err(|e| unreachable(e.to_string())),
        Scheme::Http => Err(unreachable("http locations are read-only".into())),
    }
}

/// Removes a file or directory tree at `uri`. Missing targets are not an error.
pub async fn delete_uri(uri: &GridUri) -> Result<(), TransferError> {
    let unreachable = |why: String| TransferError::DestinationUnreachable(uri.to_string(), why);
    match uri.scheme() {
        Scheme::File => {
            let path = local_path(uri);
            let res = match tokio::fs::metadata(&path).await {
                Ok(m) if m.is_dir() => tokio::fs::remove_dir_all(&path).await,
                Ok(_) => tokio::fs::remove_file(&path).await,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
                Err(e) => Err(e),
            };
            res.map_err(|e| unreachable(e.to_string()))
        }
        Scheme::Gsiftp => match fileserver(uri).delete(uri.path()).await {
            Ok(()) => Ok(()),
            Err(RpcError::Remote(e)) if e.code == ErrorCode::NotFound => Ok(()),
            Err(e) => Err(unreachable(e.to_string())),
        },
        Scheme::Http => Err(unreachable("http locations are read-only".into())),
    }
}

/// Copies `src` to `dst` under `cred`, checked at `now`.
pub async fn transfer_at(
    src: &GridUri,
    dst: &GridUri,
    cred: &ProxyCredential,
    now: DateTime<Utc>,
) -> Result<u64, TransferError> {
    match validate(cred, now) {
        Validity::Valid => {}
        other => return Err(TransferError::Auth(other)),
    }
    let bytes = read_uri(src).await?;
    write_uri(dst, &bytes).await?;
    Ok(bytes.len() as u64)
}

pub async fn transfer(
    src: &GridUri,
    dst: &GridUri,
    cred: &ProxyCredential,
) -> Result<u64, TransferError> {
    transfer_at(src, dst, cred, Utc::now()).await
}
