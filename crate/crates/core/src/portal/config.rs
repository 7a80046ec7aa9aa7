//! `portal.toml` loading.
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::credential::default_proxy_dir;
use crate::monitor::DEFAULT_POLL_INTERVAL;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("invalid portal config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid portal config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen: Option<String>,
    registry: PathBuf,
    archive: PathBuf,
    proxy_dir: Option<PathBuf>,
    /// Seconds.
    poll_interval: Option<f64>,
    catalog: Option<PathBuf>,
    jobs: Option<PathBuf>,
    ui_dir: Option<PathBuf>,
    proxy_url: Option<String>,
    tool_name: Option<String>,
    tool_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortalConfig {
    pub listen: String,
    pub registry: PathBuf,
    pub archive: PathBuf,
    pub catalog: PathBuf,
    pub jobs: PathBuf,
    pub proxy_dir: PathBuf,
    pub proxy_url: Option<String>,
    pub poll_interval: Duration,
    pub ui_dir: Option<PathBuf>,
    /// Tool bundle staged to every site before its first job; `None`
    /// disables tool-cache deployment.
    pub tool: Option<(String, String)>,
}

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_TOOL: (&str, &str) = ("gridgate-tools", "1.0");

impl PortalConfig {
    /// All state files inside `state_dir`, default everything else.
    pub fn in_dir(state_dir: &Path) -> Self {
        PortalConfig {
            listen: DEFAULT_LISTEN.to_string(),
            registry: state_dir.join("registry.json"),
            archive: state_dir.join("archive.json"),
            catalog: state_dir.join("replicas.json"),
            jobs: state_dir.join("jobs.json"),
            proxy_dir: default_proxy_dir(),
            proxy_url: None,
            poll_interval: DEFAULT_POLL_INTERVAL,
            ui_dir: None,
            tool: Some((DEFAULT_TOOL.0.to_string(), DEFAULT_TOOL.1.to_string())),
        }
    }

    /// Directory for portal-owned state other than the named files.
    pub fn state_dir(&self) -> &Path {
        self.archive.parent().unwrap_or(Path::new("."))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let archive = resolve(raw.archive);
        let state = archive
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| base.to_path_buf());
        let poll = raw
            .poll_interval
            .unwrap_or(DEFAULT_POLL_INTERVAL.as_secs_f64());
        if !(poll.is_finite() && poll > 0.0) {
            return Err(ConfigError::Invalid(
                "poll_interval must be positive".into(),
            ));
        }
        let tool = match (raw.tool_name, raw.tool_version) {
            (None, None) => Some((DEFAULT_TOOL.0.to_string(), DEFAULT_TOOL.1.to_string())),
            (Some(n), Some(_)) if n.is_empty() => None,
            (Some(n), Some(v)) => Some((n, v)),
            _ => {
                return Err(ConfigError::Invalid(
                    "tool_name and tool_version must be given together".into(),
                ))
            }
        };
        Ok(PortalConfig {
            listen: raw.listen.unwrap_or_else(|| DEFAULT_LISTEN.to_string()),
            registry: resolve(raw.registry),
            catalog: raw
                .catalog
                .map(resolve)
                .unwrap_or_else(|| state.join("replicas.json")),
            jobs: raw
                .jobs
                .map(resolve)
                .unwrap_or_else(|| state.join("jobs.json")),
            archive,
            proxy_dir: raw.proxy_dir.map(resolve).unwrap_or_else(default_proxy_dir),
            proxy_url: raw.proxy_url,
            poll_interval: Duration::from_secs_f64(poll),
            ui_dir: raw.ui_dir.map(resolve),
            tool,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}
