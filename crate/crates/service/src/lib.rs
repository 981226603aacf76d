//! Curation sessions: a generated pool, the lines pinned from it and their
//! arrangement into a poem, persisted as one JSON document per session and
//! exposed over HTTP.

pub mod error;
pub mod http;
pub mod service;
pub mod session;
pub mod store;

pub use error::ServiceError;
pub use service::{CreateRequest, Models, PoolRequest, PoolResponse, PoolService, ServiceConfig, VaryMode, VaryRequest, VaryResponse};
pub use session::{CurationSession, ExportFormat, ModelRefs};
pub use store::SessionStore;
