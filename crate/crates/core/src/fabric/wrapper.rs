//! Compute-host job wrapper.
//!
//! Runs INSTALL_LIBS, STAGE_IN, RUN, STAGE_OUT, REGISTER and CLEANUP in that
//! order inside a private working directory. A failing phase skips the rest
//! except CLEANUP. Outputs already staged out by a failed job are deleted.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::credential::ProxyCredential;
use crate::fabric::app::{run_simulated_app, NTUPLE_FILE, SUMMARY_FILE};
use crate::fabric::{ManifestEntry, WrapperPhase, WrapperRequest, MANIFEST_FILE};
use crate::model::GridUri;
use crate::staging::transfer::{delete_uri, transfer, write_local_atomic, write_uri};

pub struct WrapperContext {
    pub request: WrapperRequest,
    pub credential: ProxyCredential,
    pub workdir: PathBuf,
    pub seconds_per_event: f64,
    pub inject_failure: bool,
    /// Phases in the order they started.
    pub phase_log: Arc<Mutex<Vec<WrapperPhase>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrapperOutcome {
    pub exit_code: i32,
    pub failed_phase: Option<WrapperPhase>,
    pub outputs: Vec<GridUri>,
}

fn file_uri(path: &Path) -> Result<GridUri, String> {
    GridUri::file(path.to_string_lossy().into_owned()).map_err(|e| e.to_string())
}

impl WrapperContext {
    fn enter(&self, phase: WrapperPhase) {
        self.phase_log.lock().unwrap().push(phase);
    }

    async fn install_libs(&self) -> Result<(), String> {
        if let Some(path) = &self.request.app_install_path {
            if Path::new(path).exists() {
                return Ok(());
            }
        }
        let name = self.request.app_bundle.file_name().unwrap_or("bundle");
        let dst = file_uri(&self.workdir.join("libs").join(name))?;
        transfer(&self.request.app_bundle, &dst, &self.credential)
            .await
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    async fn stage_in(&self) -> Result<(), String> {
        for (i, src) in self.request.input_data.iter().enumerate() {
            let name = format!("{i}-{}", src.file_name().unwrap_or("input"));
            let dst = file_uri(&self.workdir.join("input").join(name))?;
            transfer(src, &dst, &self.credential)
                .await
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    async fn run(&self) -> Result<(), String> {
        let req = &self.request;
        let output = run_simulated_app(req.events, &req.physics_model, req.seed);
        let work = Duration::from_secs_f64(req.events as f64 * self.seconds_per_event);
        tokio::time::sleep(work).await;
        if self.inject_failure {
            return Err("application exited with status 1".into());
        }
        let out_dir = self.workdir.join("output");
        let summary = serde_json::to_vec(&output.summary_file()).map_err(|e| e.to_string())?;
        write_local_atomic(&out_dir.join(NTUPLE_FILE), output.ntuple_csv().as_bytes())
            .await
            .map_err(|e| e.to_string())?;
        write_local_atomic(&out_dir.join(SUMMARY_FILE), &summary)
            .await
            .map_err(|e| e.to_string())
    }

    async fn stage_out(&self, staged: &mut Vec<GridUri>) -> Result<(), String> {
        for name in [NTUPLE_FILE, SUMMARY_FILE] {
            let src = file_uri(&self.workdir.join("output").join(name))?;
            let dst = self
                .request
                .results_uri
                .join(name)
                .map_err(|e| e.to_string())?;
            // Record first so a half-written destination is still cleaned up.
            staged.push(dst.clone());
            transfer(&src, &dst, &self.credential)
                .await
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    async fn register(&self, staged: &mut Vec<GridUri>) -> Result<(), String> {
        let prefix = self.request.logical_prefix();
        let entries: Vec<ManifestEntry> = staged
            .iter()
            .map(|uri| ManifestEntry {
                logical_name: format!("{prefix}/{}", uri.file_name().unwrap_or_default()),
                uri: uri.clone(),
            })
            .collect();
        let manifest = self
            .request
            .results_uri
            .join(MANIFEST_FILE)
            .map_err(|e| e.to_string())?;
        staged.push(manifest.clone());
        let bytes = serde_json::to_vec_pretty(&entries).map_err(|e| e.to_string())?;
        write_uri(&manifest, &bytes)
            .await
            .map_err(|e| e.to_string())
    }

    async fn cleanup(&self) {
        self.enter(WrapperPhase::Cleanup);
        remove_workdir(&self.workdir).await;
    }
}

pub async fn remove_workdir(workdir: &Path) {
    match tokio::fs::remove_dir_all(workdir).await {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => tracing::warn!(dir = %workdir.display(), error = %e, "cleanup failed"),
    }
}

pub async fn run_wrapper(ctx: &WrapperContext) -> WrapperOutcome {
    let mut staged = Vec::new();
    let failed = run_phases(ctx, &mut staged).await;
    let outcome = match failed {
        None => WrapperOutcome {
            exit_code: 0,
            failed_phase: None,
            outputs: staged,
        },
        Some((phase, why)) => {
            tracing::debug!(job = %ctx.request.logical_prefix(), ?phase, %why, "wrapper phase failed");
            for uri in &staged {
                let _ = delete_uri(uri).await;
            }
            WrapperOutcome {
                exit_code: phase.failure_exit_code(),
                failed_phase: Some(phase),
                outputs: Vec::new(),
            }
        }
    };
    ctx.cleanup().await;
    outcome
}

async fn run_phases(
    ctx: &WrapperContext,
    staged: &mut Vec<GridUri>,
) -> Option<(WrapperPhase, String)> {
    if let Err(e) = tokio::fs::create_dir_all(&ctx.workdir).await {
        return Some((WrapperPhase::InstallLibs, e.to_string()));
    }
    ctx.enter(WrapperPhase::InstallLibs);
    if let Err(e) = ctx.install_libs().await {
        return Some((WrapperPhase::InstallLibs, e));
    }
    ctx.enter(WrapperPhase::StageIn);
    if let Err(e) = ctx.stage_in().await {
        return Some((WrapperPhase::StageIn, e));
    }
    ctx.enter(WrapperPhase::Run);
    if let Err(e) = ctx.run().await {
        return Some((WrapperPhase::Run, e));
    }
    ctx.enter(WrapperPhase::StageOut);
    if let Err(e) = ctx.stage_out(staged).await {
        return Some((WrapperPhase::StageOut, e));
    }
    ctx.enter(WrapperPhase::Register);
    if let Err(e) = ctx.register(staged).await {
        return Some((WrapperPhase::Register, e));
    }
    None
}
