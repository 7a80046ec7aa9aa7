//! URI-addressed file movement, tool-cache deployment and the replica catalog.

pub mod catalog;
pub mod toolcache;
pub mod transfer;

pub use catalog::{ReplicaCatalog, ReplicaEntry};
pub use toolcache::{
    compare_versions, CacheOutcome, ToolBundle, ToolCacheDeployer, ToolCacheError,
};
pub use transfer::{delete_uri, read_uri, transfer, transfer_at, write_uri, TransferError};
