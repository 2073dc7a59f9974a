//! Trace telemetry aggregation for heatmap-based monitoring of microservice
//! deployments.
//!
//! The pipeline is: Zipkin spans ([`zipkin`]) are folded into per-interval
//! statistics ([`aggregate`]), persisted as nested JSON ([`store`]),
//! re-binned with pooled statistics ([`resample`]) and finally projected onto
//! labeled 2-D matrices ([`query`]). [`synth`] produces deterministic span
//! streams with injected faults for demos and tests.

pub mod aggregate;
pub mod error;
pub mod model;
pub mod query;
pub mod resample;
pub mod store;
pub mod synth;
pub mod zipkin;

pub use aggregate::{aggregate_interval, merge_bundles, CellMap, IntervalSnapshot};
pub use error::{Error, Result};
pub use model::{normalize_return_code, CellKey, DurationStats, StatsBundle, TraceSpan, View, PLACEHOLDER_RETURN_CODE};
pub use query::{
    build_frames, cell_lookup, CellHit, CodeFilter, HeatmapFrame, HeatmapFrameSet, Metric, QuerySpec, SnapshotSource,
    ValueMode,
};
pub use resample::{resample, window_aggregate, ResamplePlan};
pub use store::{
    parse_snapshot, serialize_snapshot, BlobStore, FsBlobStore, MemBlobStore, SnapshotFile, SnapshotStore,
};
pub use zipkin::{parse_zipkin_spans, ParsedBatch, DEFAULT_INSTANCE_TAG};
