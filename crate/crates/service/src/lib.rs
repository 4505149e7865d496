//! Persistent run store and the JSON HTTP API over it.
//!
//! Each run lives in its own directory under the store root as an
//! append-only event log plus a snapshot of the latest state. Screening
//! runs in background workers; review decisions are applied under
//! optimistic concurrency keyed on the run's etag.

pub mod api;
pub mod config;
pub mod store;

pub use api::{router, serve, AppState};
pub use config::{Catalog, ServiceConfig};
pub use store::{CreateRunRequest, RunStatus, Store, StoreError};
