//! Heatmap monitoring service: span intake over HTTP, per-interval sealing
//! into the snapshot store, and heatmap queries.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod replay;

pub use config::{ClockMode, ServiceConfig};
pub use error::ServiceError;
pub use pipeline::{IngestSummary, Pipeline};
