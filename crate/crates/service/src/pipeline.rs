//! Span intake, interval sealing and read access to the store.

use std::collections::BTreeMap;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use cloudheat_core::query::Catalog;
use cloudheat_core::{
    aggregate_interval, build_frames, parse_zipkin_spans, BlobStore, Error, FsBlobStore, HeatmapFrameSet,
    IntervalSnapshot, ParsedBatch, QuerySpec, SnapshotFile, SnapshotStore, TraceSpan,
};
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::ServiceError;

pub type DynStore = SnapshotStore<Box<dyn BlobStore>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub accepted: u64,
    pub skipped: u64,
    pub dropped_late: u64,
}

impl IngestSummary {
    pub fn add(&mut self, other: IngestSummary) {
        self.accepted += other.accepted;
        self.skipped += other.skipped;
        self.dropped_late += other.dropped_late;
    }
}

#[derive(Debug, Default)]
struct Intake {
    /// Open bins keyed by interval start.
    bins: BTreeMap<i64, Vec<TraceSpan>>,
    /// Every interval ending at or before this is closed.
    sealed_until: Option<i64>,
    totals: IngestSummary,
}

/// The running service state shared by HTTP handlers, the ticker and replay.
pub struct Pipeline {
    config: ServiceConfig,
    intake: Mutex<Intake>,
    store: RwLock<DynStore>,
    storage_failing: AtomicBool,
}

pub fn wall_clock_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

impl Pipeline {
    /// Open against `config.data_dir`, checking that it is writable.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let blobs = FsBlobStore::open(&config.data_dir).map_err(ServiceError::DataDir)?;
        let probe = config.data_dir.join(".write-probe");
        fs::write(&probe, b"").and_then(|_| fs::remove_file(&probe)).map_err(ServiceError::DataDir)?;
        Self::with_blobs(config, Box::new(blobs))
    }

    pub fn with_blobs(config: ServiceConfig, blobs: Box<dyn BlobStore>) -> Result<Self, ServiceError> {
        if config.base_interval_ms == 0 {
            return Err(Error::InvalidInterval.into());
        }
        let store = SnapshotStore::open(blobs)?;
        let sealed_until = store.last_start().map(|s| s + config.base_interval_ms as i64);
        Ok(Pipeline {
            config,
            intake: Mutex::new(Intake { sealed_until, ..Intake::default() }),
            store: RwLock::new(store),
            storage_failing: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn interval_ms(&self) -> i64 {
        self.config.base_interval_ms as i64
    }

    pub fn bin_start(&self, t_ms: i64) -> i64 {
        t_ms - t_ms.rem_euclid(self.interval_ms())
    }

    pub fn storage_failing(&self) -> bool {
        self.storage_failing.load(Ordering::SeqCst)
    }

    /// Running totals since this pipeline was opened.
    pub fn totals(&self) -> IngestSummary {
        self.intake.lock().unwrap().totals
    }

    pub fn sealed_until(&self) -> Option<i64> {
        self.intake.lock().unwrap().sealed_until
    }

    /// Parse a Zipkin v2 JSON array and buffer its spans.
    pub fn ingest(&self, payload: &[u8]) -> Result<IngestSummary, ServiceError> {
        if self.storage_failing() {
            return Err(ServiceError::Unavailable);
        }
        let batch = parse_zipkin_spans(payload, &self.config.instance_tag_key)?;
        self.ingest_batch(batch)
    }

    /// Buffer already parsed spans.
    pub fn ingest_batch(&self, batch: ParsedBatch) -> Result<IngestSummary, ServiceError> {
        if self.storage_failing() {
            return Err(ServiceError::Unavailable);
        }
        let mut summary = IngestSummary { skipped: batch.skipped as u64, ..Default::default() };
        let mut intake = self.intake.lock().unwrap();
        for span in batch.spans {
            let bin = self.bin_start(span.start_ms());
            if intake.sealed_until.is_some_and(|w| bin < w) {
                summary.dropped_late += 1;
                continue;
            }
            intake.bins.entry(bin).or_default().push(span);
            summary.accepted += 1;
        }
        intake.totals.add(summary);
        if summary.dropped_late > 0 {
            tracing::debug!(dropped = summary.dropped_late, "late spans dropped");
        }
        Ok(summary)
    }

    /// Seal every interval that ended at or before `now_ms`.
    ///
    /// Bins are sealed oldest first. On a storage failure the failed bin and
    /// everything after it stay buffered for the next tick.
    pub fn seal_tick(&self, now_ms: i64) -> Result<Vec<IntervalSnapshot>, ServiceError> {
        let len = self.config.base_interval_ms;
        let closed_until = self.bin_start(now_ms);
        let mut intake = self.intake.lock().unwrap();
        let ready: Vec<i64> = intake.bins.range(..closed_until).map(|(k, _)| *k).collect();
        let mut sealed = Vec::with_capacity(ready.len());
        for bin in ready {
            let snapshot = aggregate_interval(&intake.bins[&bin], bin, len)?;
            let appended = self.store.write().unwrap().append(&snapshot);
            if let Err(e) = appended {
                self.storage_failing.store(true, Ordering::SeqCst);
                tracing::error!(interval = bin, error = %e, "sealing failed, spans retained");
                return Err(e.into());
            }
            intake.bins.remove(&bin);
            intake.sealed_until = Some(intake.sealed_until.map_or(bin + len as i64, |w| w.max(bin + len as i64)));
            sealed.push(snapshot);
        }
        intake.sealed_until = Some(intake.sealed_until.map_or(closed_until, |w| w.max(closed_until)));
        if self.storage_failing.swap(false, Ordering::SeqCst) {
            tracing::info!("storage recovered");
        }
        Ok(sealed)
    }

    /// Seal every buffered bin regardless of the clock.
    pub fn flush(&self) -> Result<Vec<IntervalSnapshot>, ServiceError> {
        let last = self.intake.lock().unwrap().bins.keys().next_back().copied();
        match last {
            Some(bin) => self.seal_tick(bin + self.interval_ms()),
            None => Ok(Vec::new()),
        }
    }

    /// `[first, last_end)` of stored data.
    pub fn stored_range(&self) -> Option<(i64, i64)> {
        let store = self.store.read().unwrap();
        Some((store.first_start()?, store.last_start()? + self.interval_ms()))
    }

    pub fn files(&self) -> Vec<SnapshotFile> {
        self.store.read().unwrap().files()
    }

    pub fn heatmap(&self, spec: &QuerySpec) -> Result<HeatmapFrameSet, ServiceError> {
        spec.validate()?;
        if !spec.step_ms.is_multiple_of(self.config.base_interval_ms) {
            return Err(ServiceError::param(
                "step",
                format!("must be a multiple of the base interval {} ms", self.config.base_interval_ms),
            ));
        }
        let store = self.store.read().unwrap();
        Ok(build_frames(spec, &*store)?)
    }

    pub fn catalog(&self, from: i64, to: i64) -> Result<Catalog, ServiceError> {
        let snapshots = self.store.read().unwrap().load_window(from, to)?;
        Ok(Catalog::from_snapshots(&snapshots))
    }
}
