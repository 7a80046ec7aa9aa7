//! Subcommands that host services in this process instead of calling a
//! running portal.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, Utc};
use gridgate_core::credential::{load_credential, store_credential};
use gridgate_core::fabric::{batch_sites, resource_record, Fabric, FabricConfig, TESTBED_CPUS};
use gridgate_core::portal::{serve, serve_portal, Portal, PortalConfig, PortalOptions};
use gridgate_core::ProxyCredential;

pub const TESTBED_ACTIVE_SET: &str = "testbed";

/// Runs a portal from `config_path` (or defaults rooted at `./gridgate-state`)
/// until interrupted.
pub async fn run_serve(
    config_path: Option<&Path>,
    proxy_dir: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> Result<(), String> {
    let mut config = match config_path {
        Some(p) => PortalConfig::load(p).map_err(|e| e.to_string())?,
        None => PortalConfig::in_dir(Path::new("gridgate-state")),
    };
    if let Some(dir) = proxy_dir {
        config.proxy_dir = dir.to_path_buf();
    }
    let running = serve(config).await.map_err(|e| e.to_string())?;
    let _ = writeln!(out, "portal {}", running.url());
    let _ = out.flush();
    wait_for_interrupt().await;
    Ok(())
}

/// Starts the sites described in a fabric file and prints one resource
/// record per line, ready to POST to `/resources`.
pub async fn run_fabric(path: &Path, out: &mut (dyn Write + Send)) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config: FabricConfig =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let fabric = Fabric::start(config.sites)
        .await
        .map_err(|e| e.to_string())?;
    for handle in fabric.sites() {
        let record = serde_json::to_string(&resource_record(handle)).map_err(|e| e.to_string())?;
        let _ = writeln!(out, "{record}");
    }
    let _ = out.flush();
    wait_for_interrupt().await;
    Ok(())
}

/// A credential for local use, created on first run.
fn local_credential(proxy_dir: &Path) -> Result<ProxyCredential, String> {
    if let Ok(existing) = load_credential(proxy_dir) {
        if gridgate_core::credential::validate(&existing, Utc::now())
            == gridgate_core::Validity::Valid
        {
            return Ok(existing);
        }
    }
    let token = format!("{:032x}", rand::random::<u128>());
    let cred = ProxyCredential::root(
        "/O=Grid/CN=gridgate testbed",
        Utc::now() + Duration::days(7),
        token,
    );
    store_credential(proxy_dir, &cred).map_err(|e| format!("{}: {e}", proxy_dir.display()))?;
    Ok(cred)
}

pub struct TestbedOptions {
    pub dir: PathBuf,
    pub listen: String,
    pub seconds_per_event: f64,
    pub failure_rate: f64,
}

/// The reference 15-site fabric plus a portal with every site registered in
/// the `testbed` active set.
pub async fn run_testbed(opts: TestbedOptions, out: &mut (dyn Write + Send)) -> Result<(), String> {
    let proxy_dir = opts.dir.join("proxy");
    let credential = local_credential(&proxy_dir)?;
    let sites = batch_sites(
        &opts.dir.join("sites"),
        &TESTBED_CPUS,
        opts.seconds_per_event,
        opts.failure_rate,
    );
    let fabric = Fabric::start(sites).await.map_err(|e| e.to_string())?;
    let mut config = PortalConfig::in_dir(&opts.dir.join("portal"));
    config.listen = opts.listen.clone();
    config.proxy_dir = proxy_dir.clone();
    let portal = Portal::start(config, credential, PortalOptions::default())
        .await
        .map_err(|e| e.to_string())?;
    let ids = fabric.site_ids();
    for record in fabric.resource_records() {
        portal
            .registry()
            .upsert_resource(record)
            .map_err(|e| e.to_string())?;
    }
    portal
        .registry()
        .define_active_set(TESTBED_ACTIVE_SET, &ids)
        .map_err(|e| e.to_string())?;
    let running = serve_portal(portal, &opts.listen)
        .await
        .map_err(|e| e.to_string())?;
    let _ = writeln!(out, "portal {}", running.url());
    let _ = writeln!(out, "proxy-dir {}", proxy_dir.display());
    let _ = writeln!(
        out,
        "active-set {TESTBED_ACTIVE_SET} ({} sites, {} cpus)",
        ids.len(),
        TESTBED_CPUS.iter().sum::<u32>()
    );
    let _ = out.flush();
    wait_for_interrupt().await;
    drop(fabric);
    Ok(())
}

async fn wait_for_interrupt() {
    let _ = tokio::signal::ctrl_c().await;
}
