//! Proxy credentials: loading, validation and one-level delegation.
//!
//! A credential is a JSON document (`proxy.json`) with a subject, the chain
//! of issuers that delegated it, an expiry and an opaque token. There is no
//! X.509 here; the token of a delegated credential is the hex HMAC-SHA256 of
//! `"<subject>\n<depth>\n<not_after RFC 3339>"` keyed by the parent token.

use std::env;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub const PROXY_FILE: &str = "proxy.json";
pub const PROXY_DIR_ENV: &str = "GRIDGATE_PROXY_DIR";
pub const MAX_CHAIN_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyCredential {
    pub subject: String,
    pub issuer_chain: Vec<String>,
    pub not_after: DateTime<Utc>,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Validity {
    Valid,
    Expired,
    ChainTooDeep,
}

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("no credential at {0}")]
    NotFound(PathBuf),
    #[error("malformed credential: {0}")]
    Malformed(String),
    #[error("parent credential is not valid: {0:?}")]
    InvalidParent(Validity),
    #[error("credential fetch failed: {0}")]
    Fetch(String),
}

impl ProxyCredential {
    pub fn depth(&self) -> usize {
        self.issuer_chain.len()
    }

    /// A root credential issued to itself.
    pub fn root(
        subject: impl Into<String>,
        not_after: DateTime<Utc>,
        token: impl Into<String>,
    ) -> Self {
        let subject = subject.into();
        ProxyCredential {
            issuer_chain: vec![subject.clone()],
            subject,
            not_after,
            token: token.into(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CredentialError> {
        let cred: ProxyCredential =
            serde_json::from_slice(bytes).map_err(|e| CredentialError::Malformed(e.to_string()))?;
        if cred.issuer_chain.is_empty() {
            return Err(CredentialError::Malformed("issuer_chain is empty".into()));
        }
        if cred.subject.is_empty() {
            return Err(CredentialError::Malformed("subject is empty".into()));
        }
        Ok(cred)
    }
}

/// `$GRIDGATE_PROXY_DIR`, else `~/.gridgate`.
pub fn default_proxy_dir() -> PathBuf {
    if let Some(dir) = env::var_os(PROXY_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
    home.join(".gridgate")
}

/// Reads `<directory>/proxy.json` without checking expiry.
pub fn load_credential(directory: &Path) -> Result<ProxyCredential, CredentialError> {
    let path = directory.join(PROXY_FILE);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CredentialError::NotFound(path.clone()),
        _ => CredentialError::Malformed(e.to_string()),
    })?;
    ProxyCredential::from_json(&bytes)
}

pub fn store_credential(directory: &Path, cred: &ProxyCredential) -> io::Result<()> {
    crate::persist::write_json_atomic(&directory.join(PROXY_FILE), cred)
}

/// Retrieves a credential document from a remote credential server. Only
/// used when a fetch URL is configured.
pub async fn fetch_credential(url: &str) -> Result<ProxyCredential, CredentialError> {
    let resp = reqwest::get(url)
        .await
        .map_err(|e| CredentialError::Fetch(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(CredentialError::Fetch(format!("HTTP {}", resp.status())));
    }
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| CredentialError::Fetch(e.to_string()))?;
    ProxyCredential::from_json(&bytes)
}

pub fn validate(cred: &ProxyCredential, now: DateTime<Utc>) -> Validity {
    if now >= cred.not_after {
        Validity::Expired
    } else if cred.depth() > MAX_CHAIN_DEPTH {
        Validity::ChainTooDeep
    } else {
        Validity::Valid
    }
}

fn derive_token(
    parent_token: &str,
    subject: &str,
    depth: usize,
    not_after: DateTime<Utc>,
) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(parent_token.as_bytes())
        .expect("HMAC accepts keys of any length");
    let message = format!(
        "{subject}\n{depth}\n{}",
        not_after.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    );
    mac.update(message.as_bytes());
    let digest = mac.finalize().into_bytes();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Issues a child credential one level below `cred`.
pub fn delegate(
    cred: &ProxyCredential,
    lifetime: Duration,
    now: DateTime<Utc>,
) -> Result<ProxyCredential, CredentialError> {
    match validate(cred, now) {
        Validity::Valid => {}
        other => return Err(CredentialError::InvalidParent(other)),
    }
    let not_after = cred.not_after.min(now + lifetime);
    let mut issuer_chain = cred.issuer_chain.clone();
    issuer_chain.push(cred.subject.clone());
    let token = derive_token(&cred.token, &cred.subject, issuer_chain.len(), not_after);
    Ok(ProxyCredential {
        subject: cred.subject.clone(),
        issuer_chain,
        not_after,
        token,
    })
}
