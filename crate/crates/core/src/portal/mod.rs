//! The portal service: submission archive, credential-gated HTTP API and
//! the wiring between registry, dispatcher and monitor.

pub mod archive;
pub mod config;
pub mod http;
pub mod service;

pub use archive::{Archive, ArchiveEntry};
pub use config::PortalConfig;
pub use http::{
    router, serve, serve_portal, JobSelection, JobsetCreated, RunningPortal, TOKEN_HEADER,
};
pub use service::{Portal, PortalError, PortalOptions};
