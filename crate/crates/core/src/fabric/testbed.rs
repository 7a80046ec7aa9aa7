//! Launching several sites at once and describing them to a registry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fabric::{start_site, JobManagerKind, SiteConfig, SiteError, SiteHandle};
use crate::registry::ResourceRecord;

/// CPU counts of the reference 15-site, 100-CPU testbed.
pub const TESTBED_CPUS: [u32; 15] = [13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 4, 4, 3, 2, 2];

/// On-disk fabric description: a list of site configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub sites: Vec<SiteConfig>,
}

/// Registry record advertising a running site.
pub fn resource_record(handle: &SiteHandle) -> ResourceRecord {
    let config = handle.site().config();
    ResourceRecord {
        site_id: config.site_id.clone(),
        os: std::env::consts::OS.to_string(),
        runtime_version: env!("CARGO_PKG_VERSION").to_string(),
        cpu_count: config.cpu_count,
        speed_factor: 1.0,
        firewall_ports: None,
        jobmanager_kind: config.jobmanager_kind,
        jobmanager_contact: handle.jobmanager_contact(),
        fileserver_contact: handle.fileserver_contact(),
        app_install_path: None,
    }
}

/// Batch sites `site-01` .. `site-NN` with the given CPU counts, each under
/// its own directory below `base_dir`.
pub fn batch_sites(
    base_dir: &Path,
    cpus: &[u32],
    seconds_per_event: f64,
    failure_rate: f64,
) -> Vec<SiteConfig> {
    cpus.iter()
        .enumerate()
        .map(|(i, c)| {
            let id = format!("site-{:02}", i + 1);
            let mut config = SiteConfig::new(&id, *c, JobManagerKind::Batch, base_dir.join(&id));
            config.seconds_per_event = seconds_per_event;
            config.failure_rate = failure_rate;
            config
        })
        .collect()
}

pub struct Fabric {
    sites: Vec<SiteHandle>,
}

impl Fabric {
    pub async fn start(configs: Vec<SiteConfig>) -> Result<Self, SiteError> {
        let mut sites = Vec::with_capacity(configs.len());
        for config in configs {
            sites.push(start_site(config).await?);
        }
        Ok(Fabric { sites })
    }

    pub fn sites(&self) -> &[SiteHandle] {
        &self.sites
    }

    pub fn site(&self, site_id: &str) -> Option<&SiteHandle> {
        self.sites.iter().find(|h| h.site().site_id() == site_id)
    }

    /// Takes a site off the network; its queued jobs keep running.
    pub fn stop_site(&mut self, site_id: &str) -> bool {
        match self
            .sites
            .iter_mut()
            .find(|h| h.site().site_id() == site_id)
        {
            Some(h) => {
                h.stop();
                true
            }
            None => false,
        }
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.sites
            .iter()
            .map(|h| h.site().site_id().to_string())
            .collect()
    }

    pub fn resource_records(&self) -> Vec<ResourceRecord> {
        self.sites.iter().map(resource_record).collect()
    }
}
