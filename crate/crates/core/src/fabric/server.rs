//! TCP front ends for a site: job-manager and file server listeners.

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::io::BufReader;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::fabric::{fileserver, Site, SiteConfig, SiteError};
use crate::wire::{read_line, write_line, JobManagerRequest, JobManagerResponse};

/// A running site. Dropping the handle stops its listeners.
pub struct SiteHandle {
    site: Arc<Site>,
    jobmanager_addr: SocketAddr,
    fileserver_addr: SocketAddr,
    listeners: Vec<JoinHandle<()>>,
}

impl SiteHandle {
    pub fn site(&self) -> &Arc<Site> {
        &self.site
    }

    pub fn jobmanager_addr(&self) -> SocketAddr {
        self.jobmanager_addr
    }

    pub fn fileserver_addr(&self) -> SocketAddr {
        self.fileserver_addr
    }

    /// `host:port/jobmanager-<kind>`
    pub fn jobmanager_contact(&self) -> String {
        format!(
            "{}/{}",
            self.jobmanager_addr,
            self.site.config().jobmanager_kind.service_name()
        )
    }

    pub fn fileserver_contact(&self) -> String {
        self.fileserver_addr.to_string()
    }

    /// Stops accepting connections. Jobs already queued keep running.
    pub fn stop(&mut self) {
        for task in self.listeners.drain(..) {
            task.abort();
        }
    }
}

impl Drop for SiteHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn bind(addr: &str) -> Result<TcpListener, SiteError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| SiteError::Bind(addr.to_string(), e))
}

pub async fn start_site(config: SiteConfig) -> Result<SiteHandle, SiteError> {
    config.validate()?;
    tokio::fs::create_dir_all(&config.base_dir).await?;
    let jm = bind(&config.listen).await?;
    let fs = bind(&config.file_listen).await?;
    let site = Site::new(config)?;
    let jobmanager_addr = jm.local_addr()?;
    let fileserver_addr = fs.local_addr()?;
    let jm_task = tokio::spawn(accept_loop(jm, site.clone(), |site, stream| {
        tokio::spawn(serve_jobmanager(site, stream));
    }));
    let fs_task = tokio::spawn(accept_loop(fs, site.clone(), |site, stream| {
        tokio::spawn(fileserver::serve_connection(site, stream));
    }));
    tracing::info!(site = site.site_id(), %jobmanager_addr, %fileserver_addr, "site started");
    Ok(SiteHandle {
        site,
        jobmanager_addr,
        fileserver_addr,
        listeners: vec![jm_task, fs_task],
    })
}

async fn accept_loop(listener: TcpListener, site: Arc<Site>, spawn: fn(Arc<Site>, TcpStream)) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => spawn(site.clone(), stream),
            Err(e) => {
                tracing::warn!(site = site.site_id(), error = %e, "accept failed");
                tokio::time::sleep(std::time::Duration::from_millis(10)).await;
            }
        }
    }
}

async fn serve_jobmanager(site: Arc<Site>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let mut stream = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut stream).await {
        let response = match JobManagerRequest::decode(&line) {
            Err(e) => JobManagerResponse::Err(e),
            Ok(JobManagerRequest::Ping) => JobManagerResponse::Pong(site.site_id().to_string()),
            Ok(JobManagerRequest::Submit(payload)) => {
                let payload = *payload;
                site.gram_submit(payload.request, payload.credential)
                    .map_or_else(JobManagerResponse::Err, JobManagerResponse::Ok)
            }
            Ok(JobManagerRequest::Status(contact)) => site
                .gram_status(&contact)
                .map_or_else(JobManagerResponse::Err, |(s, c)| {
                    JobManagerResponse::State(s, c)
                }),
            Ok(JobManagerRequest::Cancel(contact)) => site
                .gram_cancel(&contact)
                .await
                .map_or_else(JobManagerResponse::Err, |(s, c)| {
                    JobManagerResponse::State(s, c)
                }),
            Ok(JobManagerRequest::Jdl {
                document,
                credential,
            }) => site
                .broker_accept(&document, credential)
                .map_or_else(JobManagerResponse::Err, JobManagerResponse::Ok),
        };
        if write_line(stream.get_mut(), &response.to_string())
            .await
            .is_err()
        {
            return;
        }
    }
}
