//! HTTP+JSON API.
//!
//! Every API route requires `X-Proxy-Token`; static UI assets under `/ui/`
//! do not, since a browser fetches them before the user pastes a token.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::credential::{fetch_credential, load_credential, ProxyCredential};
use crate::model::{parse_grid_uri, JobRecord, JobsetSpec};
use crate::monitor::{DatasetSummary, JobStatus};
use crate::portal::archive::ArchiveEntry;
use crate::portal::config::PortalConfig;
use crate::portal::service::{Portal, PortalError, PortalOptions};
use crate::registry::{ActiveSet, AvailabilityReport, ResourceRecord};
use crate::staging::{read_uri, ReplicaEntry};

pub const TOKEN_HEADER: &str = "x-proxy-token";

impl PortalError {
    pub fn status(&self) -> StatusCode {
        match self {
            PortalError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            PortalError::NotFound(_) => StatusCode::NOT_FOUND,
            PortalError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PortalError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            PortalError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for PortalError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, PortalError>;
type Shared = State<Arc<Portal>>;

async fn require_token(
    State(portal): Shared,
    headers: HeaderMap,
    request: Request,
    next: Next,
) -> Response {
    let token = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
    match portal.authorize(token) {
        Ok(_) => next.run(request).await,
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobsetCreated {
    pub jobset_id: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JobSelection {
    #[serde(default)]
    pub job_ids: Vec<String>,
    /// Selects every job of a jobset in addition to `job_ids`.
    #[serde(default)]
    pub jobset: Option<String>,
}

#[derive(Debug, Deserialize)]
struct JobsQuery {
    jobset: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ReplicaQuery {
    name: Option<String>,
    prefix: Option<String>,
}

#[derive(Debug, Deserialize)]
struct FileQuery {
    uri: String,
}

async fn add_resource(
    State(portal): Shared,
    Json(record): Json<ResourceRecord>,
) -> ApiResult<impl IntoResponse> {
    let site_id = portal.registry().upsert_resource(record)?;
    Ok((StatusCode::CREATED, Json(json!({ "site_id": site_id }))))
}

async fn list_resources(State(portal): Shared) -> Json<Vec<ResourceRecord>> {
    Json(portal.registry().resources())
}

async fn probe_resource(State(portal): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let report: AvailabilityReport = portal
        .registry()
        .test_availability(&id, &portal.credential())
        .await
        .map_err(|e| match e {
            crate::registry::RegistryError::UnknownSite(_) => PortalError::NotFound(e.to_string()),
            other => other.into(),
        })?;
    let status = if report.jobmanager_ok || report.fileserver_ok {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    Ok((status, Json(report)).into_response())
}

async fn define_active_set(
    State(portal): Shared,
    Json(set): Json<ActiveSet>,
) -> ApiResult<impl IntoResponse> {
    let set = portal
        .registry()
        .define_active_set(&set.name, &set.site_ids)?;
    Ok((StatusCode::CREATED, Json(set)))
}

async fn list_active_sets(State(portal): Shared) -> Json<Vec<ActiveSet>> {
    Json(portal.registry().active_sets())
}

async fn submit_jobset(
    State(portal): Shared,
    Json(spec): Json<JobsetSpec>,
) -> ApiResult<impl IntoResponse> {
    let jobset_id = portal.submit_jobset(spec)?;
    Ok((StatusCode::ACCEPTED, Json(JobsetCreated { jobset_id })))
}

async fn list_jobsets(State(portal): Shared) -> Json<Vec<ArchiveEntry>> {
    Json(portal.archive().list())
}

async fn get_jobset(
    State(portal): Shared,
    Path(id): Path<String>,
) -> ApiResult<Json<ArchiveEntry>> {
    portal.entry(&id).map(Json)
}

async fn resubmit(State(portal): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let jobset_id = portal.resubmit(&id)?;
    Ok((StatusCode::ACCEPTED, Json(JobsetCreated { jobset_id })))
}

async fn summary(State(portal): Shared, Path(id): Path<String>) -> ApiResult<Json<DatasetSummary>> {
    portal.entry(&id)?;
    Ok(Json(portal.monitor().update_summary(&id).await?))
}

async fn list_jobs(
    State(portal): Shared,
    Query(q): Query<JobsQuery>,
) -> ApiResult<Json<Vec<JobRecord>>> {
    match q.jobset {
        Some(id) => {
            portal.entry(&id)?;
            Ok(Json(portal.jobs().for_jobset(&id)))
        }
        None => Ok(Json(portal.jobs().all())),
    }
}

fn selected(portal: &Portal, sel: JobSelection) -> ApiResult<Vec<String>> {
    let mut ids = sel.job_ids;
    if let Some(jobset) = sel.jobset {
        ids.extend(portal.entry(&jobset)?.job_ids);
    }
    Ok(ids)
}

async fn poll_jobs(
    State(portal): Shared,
    Json(sel): Json<JobSelection>,
) -> ApiResult<Json<Vec<JobStatus>>> {
    let ids = selected(&portal, sel)?;
    Ok(Json(portal.monitor().poll_jobs(&ids).await))
}

async fn cancel_jobs(
    State(portal): Shared,
    Json(sel): Json<JobSelection>,
) -> ApiResult<Json<Vec<JobStatus>>> {
    let ids = selected(&portal, sel)?;
    Ok(Json(
        portal
            .monitor()
            .cancel_jobs(&ids, &portal.credential())
            .await?,
    ))
}

async fn replicas(
    State(portal): Shared,
    Query(q): Query<ReplicaQuery>,
) -> ApiResult<Json<Vec<ReplicaEntry>>> {
    match (q.name, q.prefix) {
        (Some(name), _) => portal
            .catalog()
            .entry(&name)
            .map(|e| Json(vec![e]))
            .ok_or_else(|| PortalError::NotFound(format!("no replicas for {name}"))),
        (None, prefix) => Ok(Json(
            portal
                .catalog()
                .entries_with_prefix(prefix.as_deref().unwrap_or("")),
        )),
    }
}

/// Serves the content of a registered replica.
async fn file_content(State(portal): Shared, Query(q): Query<FileQuery>) -> ApiResult<Response> {
    let uri = parse_grid_uri(&q.uri).map_err(|e| PortalError::Validation(e.to_string()))?;
    let registered = portal
        .catalog()
        .entries_with_prefix("")
        .iter()
        .any(|e| e.physical.contains(&uri));
    if !registered {
        return Err(PortalError::NotFound(format!(
            "{uri} is not a registered replica"
        )));
    }
    let bytes = read_uri(&uri)
        .await
        .map_err(|e| PortalError::NotFound(e.to_string()))?;
    Ok(([("content-type", "application/octet-stream")], bytes).into_response())
}

pub fn router(portal: Arc<Portal>) -> Router {
    let api = Router::new()
        .route("/resources", post(add_resource).get(list_resources))
        .route("/resources/{id}/probe", post(probe_resource))
        .route(
            "/active-sets",
            post(define_active_set).get(list_active_sets),
        )
        .route("/jobsets", post(submit_jobset).get(list_jobsets))
        .route("/jobsets/{id}", get(get_jobset))
        .route("/jobsets/{id}/resubmit", post(resubmit))
        .route("/jobsets/{id}/summary", get(summary))
        .route("/jobs", get(list_jobs))
        .route("/jobs/poll", post(poll_jobs))
        .route("/jobs/cancel", post(cancel_jobs))
        .route("/replicas", get(replicas))
        .route("/files", get(file_content))
        .route_layer(middleware::from_fn_with_state(
            portal.clone(),
            require_token,
        ));
    let app = match &portal.config().ui_dir {
        Some(dir) => api.nest_service(
            "/ui",
            ServeDir::new(dir).append_index_html_on_directories(true),
        ),
        None => api,
    };
    app.with_state(portal)
}

/// A portal bound to a socket, with its background poller.
pub struct RunningPortal {
    pub portal: Arc<Portal>,
    pub addr: SocketAddr,
    server: JoinHandle<()>,
    poller: JoinHandle<()>,
}

impl RunningPortal {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(&self) {
        self.server.abort();
        self.poller.abort();
    }

    /// Resolves when the server stops.
    pub async fn join(&mut self) {
        let _ = (&mut self.server).await;
    }
}

impl Drop for RunningPortal {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `portal` to `listen` and starts the poller.
pub async fn serve_portal(portal: Arc<Portal>, listen: &str) -> Result<RunningPortal, PortalError> {
    let listener = TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let app = router(portal.clone());
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "portal server stopped");
        }
    });
    let poller = portal.monitor().spawn_poller(portal.config().poll_interval);
    tracing::info!(%addr, "portal listening");
    Ok(RunningPortal {
        portal,
        addr,
        server,
        poller,
    })
}

/// Loads the portal credential: from `proxy_url` when configured, otherwise
/// from the proxy directory.
pub async fn portal_credential(config: &PortalConfig) -> Result<ProxyCredential, PortalError> {
    let loaded = match &config.proxy_url {
        Some(url) => fetch_credential(url).await,
        None => load_credential(&config.proxy_dir),
    };
    loaded.map_err(|e| PortalError::Unauthorized(e.to_string()))
}

/// Starts a portal from its configuration.
pub async fn serve(config: PortalConfig) -> Result<RunningPortal, PortalError> {
    let credential = portal_credential(&config).await?;
    let listen = config.listen.clone();
    let portal = Portal::start(config, credential, PortalOptions::default()).await?;
    serve_portal(portal, &listen).await
}
