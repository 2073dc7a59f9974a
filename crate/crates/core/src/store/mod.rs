//! Append-only snapshot persistence with size-capped file rotation.

mod blob;
mod format;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

pub use blob::{BlobStore, FsBlobStore, MemBlobStore};
pub use format::{format_real, parse_snapshot, serialize_snapshot, serialize_snapshots, DEFAULT_INTERVAL_MS};

use crate::aggregate::IntervalSnapshot;
use crate::error::{Error, Result};

/// Per-file size cap in bytes.
pub const FILE_CAP_BYTES: usize = 1_048_576;

const PREFIX: &str = "snapshots-";
const SUFFIX: &str = ".json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotFile {
    pub path: String,
    pub first_ts: i64,
    pub last_ts: i64,
    pub byte_size: usize,
}

fn file_key(first_ts: i64) -> String {
    format!("{PREFIX}{first_ts}{SUFFIX}")
}

fn key_ts(key: &str) -> Option<i64> {
    key.strip_prefix(PREFIX)?.strip_suffix(SUFFIX)?.parse().ok()
}

struct OpenFile {
    meta: SnapshotFile,
    entries: Vec<String>,
    snapshots: Vec<IntervalSnapshot>,
}

impl OpenFile {
    fn size_with(&self, entry: &str) -> usize {
        // braces + comma separators + entries
        2 + self.entries.iter().map(|e| e.len() + 1).sum::<usize>() + entry.len()
    }
}

/// Snapshot timeline over a [`BlobStore`].
///
/// Appends go to the open file until the next one would push it past the
/// cap; then it is sealed and a new file starts. A snapshot whose encoding
/// alone exceeds the cap is written to a file of its own and sealed at once.
pub struct SnapshotStore<B> {
    blobs: B,
    cap_bytes: usize,
    sealed: Vec<SnapshotFile>,
    open: Option<OpenFile>,
    cache: Mutex<HashMap<String, Arc<Vec<IntervalSnapshot>>>>,
    warnings: Vec<String>,
}

impl<B: BlobStore> SnapshotStore<B> {
    pub fn open(blobs: B) -> Result<Self> {
        Self::with_cap(blobs, FILE_CAP_BYTES)
    }

    /// Open with a custom cap; existing files are indexed and the newest one
    /// is reopened for appends if it still has room.
    pub fn with_cap(blobs: B, cap_bytes: usize) -> Result<Self> {
        let mut keyed: Vec<(i64, String)> =
            blobs.list()?.into_iter().filter_map(|k| key_ts(&k).map(|ts| (ts, k))).collect();
        keyed.sort();
        let mut store = SnapshotStore {
            blobs,
            cap_bytes,
            sealed: Vec::new(),
            open: None,
            cache: Mutex::new(HashMap::new()),
            warnings: Vec::new(),
        };
        let count = keyed.len();
        for (i, (_, key)) in keyed.into_iter().enumerate() {
            let bytes = store.blobs.get(&key)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::schema(key.clone(), "file is not UTF-8"))?;
            let snapshots = parse_snapshot(&text)?;
            let (Some(first), Some(last)) = (snapshots.first(), snapshots.last()) else {
                continue;
            };
            let meta = SnapshotFile {
                path: key.clone(),
                first_ts: first.interval_start,
                last_ts: last.interval_start,
                byte_size: text.len(),
            };
            if i + 1 == count && text.len() < cap_bytes {
                let entries = snapshots.iter().map(format::serialize_entry).collect();
                store.open = Some(OpenFile { meta, entries, snapshots });
            } else {
                store.cache.lock().unwrap().insert(key, Arc::new(snapshots));
                store.sealed.push(meta);
            }
        }
        Ok(store)
    }

    pub fn cap_bytes(&self) -> usize {
        self.cap_bytes
    }

    /// Start of the newest stored snapshot.
    pub fn last_start(&self) -> Option<i64> {
        self.open.as_ref().map(|o| o.meta.last_ts).or_else(|| self.sealed.last().map(|f| f.last_ts))
    }

    pub fn first_start(&self) -> Option<i64> {
        self.sealed.first().or(self.open.as_ref().map(|o| &o.meta)).map(|f| f.first_ts)
    }

    /// All files, sealed first, then the open one.
    pub fn files(&self) -> Vec<SnapshotFile> {
        self.sealed.iter().cloned().chain(self.open.as_ref().map(|o| o.meta.clone())).collect()
    }

    /// Messages recorded for cap waivers.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn append(&mut self, s: &IntervalSnapshot) -> Result<SnapshotFile> {
        if let Some(last) = self.last_start() {
            if s.interval_start <= last {
                return Err(Error::OutOfOrderAppend { start: s.interval_start, last });
            }
        }
        let entry = format::serialize_entry(s);
        // keep what a reader of the file would see, e.g. non-finite values as absent
        let s = &parse_snapshot(&format::join_entries([entry.as_str()]))?.pop().expect("one snapshot per entry");
        let fits = self.open.as_ref().is_some_and(|o| o.size_with(&entry) <= self.cap_bytes);

        if fits {
            let open = self.open.as_mut().expect("open file");
            let text = format::join_entries(open.entries.iter().map(String::as_str).chain([entry.as_str()]));
            self.blobs.put(&open.meta.path, text.as_bytes())?;
            open.entries.push(entry);
            open.snapshots.push(s.clone());
            open.meta.last_ts = s.interval_start;
            open.meta.byte_size = text.len();
            return Ok(open.meta.clone());
        }

        let text = format::join_entries([entry.as_str()]);
        let meta = SnapshotFile {
            path: file_key(s.interval_start),
            first_ts: s.interval_start,
            last_ts: s.interval_start,
            byte_size: text.len(),
        };
        self.blobs.put(&meta.path, text.as_bytes())?;
        if let Some(prev) = self.open.take() {
            self.seal(prev);
        }
        let file = OpenFile { meta: meta.clone(), entries: vec![entry], snapshots: vec![s.clone()] };
        if text.len() > self.cap_bytes {
            let msg = format!(
                "snapshot at {} encodes to {} bytes, above the {} byte cap; stored alone in {}",
                s.interval_start,
                text.len(),
                self.cap_bytes,
                meta.path
            );
            tracing::warn!("{msg}");
            self.warnings.push(msg);
            self.seal(file);
        } else {
            self.open = Some(file);
        }
        Ok(meta)
    }

    fn seal(&mut self, file: OpenFile) {
        self.cache.lock().unwrap().insert(file.meta.path.clone(), Arc::new(file.snapshots));
        self.sealed.push(file.meta);
    }

    fn sealed_snapshots(&self, meta: &SnapshotFile) -> Result<Arc<Vec<IntervalSnapshot>>> {
        if let Some(hit) = self.cache.lock().unwrap().get(&meta.path) {
            return Ok(hit.clone());
        }
        let bytes = self.blobs.get(&meta.path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::schema(meta.path.clone(), "file is not UTF-8"))?;
        let parsed = Arc::new(parse_snapshot(&text)?);
        self.cache.lock().unwrap().insert(meta.path.clone(), parsed.clone());
        Ok(parsed)
    }

    /// Snapshots with `from <= interval_start < to`, ascending.
    pub fn load_window(&self, from: i64, to: i64) -> Result<Vec<IntervalSnapshot>> {
        if from >= to {
            return Err(Error::InvalidWindow { from, to });
        }
        let in_window = |s: &&IntervalSnapshot| s.interval_start >= from && s.interval_start < to;
        let overlaps = |f: &SnapshotFile| f.first_ts < to && f.last_ts >= from;
        let mut out = Vec::new();
        for meta in self.sealed.iter().filter(|f| overlaps(f)) {
            out.extend(self.sealed_snapshots(meta)?.iter().filter(in_window).cloned());
        }
        if let Some(open) = self.open.as_ref().filter(|o| overlaps(&o.meta)) {
            out.extend(open.snapshots.iter().filter(in_window).cloned());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StatsBundle, View};

    fn snapshot(start: i64, cells: usize) -> IntervalSnapshot {
        let s = raw_snapshot(start, cells);
        parse_snapshot(&serialize_snapshot(&s)).unwrap().pop().unwrap()
    }

    fn raw_snapshot(start: i64, cells: usize) -> IntervalSnapshot {
        let mut s = IntervalSnapshot::empty(start, 60_000);
        for i in 0..cells {
            let mut b = StatsBundle::from_durations_ms(&[i as f64 + 0.123456789, 2.0 * i as f64 + 1.0]);
            b.pct = Some(100.0);
            s.cells_mut(View::CallerCallee)
                .entry(format!("caller-{:04}", i / 50))
                .or_default()
                .entry(format!("callee-{i:06}"))
                .or_default()
                .insert("200".into(), b);
        }
        s
    }

    /// Cell count whose encoding is closest to `target` bytes.
    fn cells_for(target: usize) -> usize {
        let per = serialize_snapshot(&snapshot(0, 1000)).len() as f64 / 1000.0;
        (target as f64 / per) as usize
    }

    #[test]
    fn first_append_creates_one_file() {
        let mut store = SnapshotStore::open(MemBlobStore::new()).unwrap();
        let f = store.append(&snapshot(60_000, 3)).unwrap();
        assert_eq!(f.path, "snapshots-60000.json");
        assert_eq!(store.files().len(), 1);
    }

    #[test]
    fn rotation_after_third_300k_snapshot() {
        let n = cells_for(300_000);
        let mut store = SnapshotStore::open(MemBlobStore::new()).unwrap();
        let sizes: Vec<usize> = (0..4).map(|i| serialize_snapshot(&snapshot(i * 60_000, n)).len()).collect();
        assert!(sizes.iter().all(|&s| (280_000..320_000).contains(&s)), "{sizes:?}");
        for i in 0..3 {
            store.append(&snapshot(i * 60_000, n)).unwrap();
            assert_eq!(store.files().len(), 1);
        }
        store.append(&snapshot(180_000, n)).unwrap();
        let files = store.files();
        assert_eq!(files.len(), 2);
        assert_eq!((files[0].first_ts, files[0].last_ts), (0, 120_000));
        assert!(files[0].byte_size <= FILE_CAP_BYTES);
        assert_eq!(files[1].first_ts, 180_000);
    }

    #[test]
    fn oversized_snapshot_is_waived_and_isolated() {
        let n = cells_for(2 * 1_048_576);
        let mut store = SnapshotStore::open(MemBlobStore::new()).unwrap();
        store.append(&snapshot(0, 2)).unwrap();
        let big = store.append(&snapshot(60_000, n)).unwrap();
        assert!(big.byte_size > FILE_CAP_BYTES);
        assert_eq!(store.warnings().len(), 1);
        store.append(&snapshot(120_000, 2)).unwrap();
        let files = store.files();
        assert_eq!(files.len(), 3);
        assert_eq!((files[1].first_ts, files[1].last_ts), (60_000, 60_000));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut store = SnapshotStore::open(MemBlobStore::new()).unwrap();
        store.append(&snapshot(120_000, 1)).unwrap();
        for start in [120_000, 60_000] {
            assert!(matches!(store.append(&snapshot(start, 1)), Err(Error::OutOfOrderAppend { .. })));
        }
    }

    #[test]
    fn windows() {
        let mut store = SnapshotStore::with_cap(MemBlobStore::new(), 4_000).unwrap();
        let snaps: Vec<_> = (0..12).map(|i| snapshot(i * 60_000, 5)).collect();
        for s in &snaps {
            store.append(s).unwrap();
        }
        assert!(store.files().len() > 2);
        assert_eq!(store.load_window(i64::MIN, i64::MAX).unwrap(), snaps);
        assert!(matches!(store.load_window(5, 5), Err(Error::InvalidWindow { .. })));
        assert!(store.load_window(10_000_000, 20_000_000).unwrap().is_empty());

        // a window straddling the first rotation boundary
        let files = store.files();
        let edge = files[1].first_ts;
        let got = store.load_window(edge - 60_000, edge + 60_000).unwrap();
        assert_eq!(got, snaps[(edge / 60_000 - 1) as usize..=(edge / 60_000) as usize]);
    }

    #[test]
    fn reopen_continues_timeline() {
        let blobs = Arc::new(MemBlobStore::new());
        let snaps: Vec<_> = (0..6).map(|i| snapshot(i * 60_000, 4)).collect();
        {
            let mut store = SnapshotStore::with_cap(blobs.clone(), 3_000).unwrap();
            for s in &snaps[..4] {
                store.append(s).unwrap();
            }
        }
        let mut store = SnapshotStore::with_cap(blobs.clone(), 3_000).unwrap();
        assert_eq!(store.last_start(), Some(180_000));
        for s in &snaps[4..] {
            store.append(s).unwrap();
        }
        assert_eq!(store.load_window(0, i64::MAX).unwrap(), snaps);
        for f in store.files() {
            assert!(f.byte_size <= 3_000);
            assert_eq!(blobs.get(&f.path).unwrap().len(), f.byte_size);
        }
    }

    #[test]
    fn loads_return_the_stored_form() {
        let mut store = SnapshotStore::open(MemBlobStore::new()).unwrap();
        store.append(&raw_snapshot(0, 3)).unwrap();
        assert_eq!(store.load_window(0, 1).unwrap(), vec![snapshot(0, 3)]);
    }

    #[test]
    fn filesystem_backend() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = SnapshotStore::open(FsBlobStore::open(dir.path()).unwrap()).unwrap();
        store.append(&snapshot(0, 2)).unwrap();
        store.append(&snapshot(60_000, 2)).unwrap();
        let names: Vec<_> =
            std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert_eq!(names, vec!["snapshots-0.json"]);
        let reopened = SnapshotStore::open(FsBlobStore::open(dir.path()).unwrap()).unwrap();
        assert_eq!(reopened.load_window(0, 120_000).unwrap().len(), 2);
    }
}
