//! Feeding a recorded span file through the pipeline under a manual clock.
//!
//! The file is NDJSON: one Zipkin v2 JSON array per line. After each line
//! the clock is advanced to the start of the earliest interval that line
//! touches, and after the last line every remaining interval is sealed.
//! The same file always yields the same sealed snapshots.

use std::io::BufRead;
use std::thread;
use std::time::Duration;

use cloudheat_core::{parse_zipkin_spans, Error};
use serde::Serialize;

use crate::error::ServiceError;
use crate::pipeline::{IngestSummary, Pipeline};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub lines: u64,
    pub totals: IngestSummary,
    pub sealed: u64,
}

/// Replay into an in-process pipeline. `speed` is the multiple of real time
/// to pace lines at; 0 disables pacing.
pub fn replay_into<R: BufRead>(p: &Pipeline, reader: R, speed: f64) -> Result<ReplayReport, ServiceError> {
    let tag = p.config().instance_tag_key.clone();
    let interval = p.interval_ms();
    drive(
        reader,
        &tag,
        interval,
        speed,
        |line| {
            let batch = parse_zipkin_spans(line, &tag)?;
            p.ingest_batch(batch)
        },
        |now| Ok(p.seal_tick(now)?.len() as u64),
    )
}

/// Replay against a running service started with the manual clock.
pub fn replay_remote<R: BufRead>(
    base_url: &str,
    reader: R,
    speed: f64,
    instance_tag: &str,
    interval_ms: i64,
) -> Result<ReplayReport, ServiceError> {
    let client = reqwest::blocking::Client::new();
    let base = base_url.trim_end_matches('/');
    let remote = |e: reqwest::Error| ServiceError::Core(Error::StorageFailure(std::io::Error::other(e)));
    drive(
        reader,
        instance_tag,
        interval_ms,
        speed,
        |line| {
            let resp = client
                .post(format!("{base}/api/v1/spans"))
                .header("content-type", "application/json")
                .body(line.to_vec())
                .send()
                .map_err(remote)?;
            let status = resp.status();
            let body = resp.text().map_err(remote)?;
            if !status.is_success() {
                return Err(Error::MalformedPayload(format!("server answered {status}: {body}")).into());
            }
            serde_json::from_str::<RemoteSummary>(&body)
                .map(|r| IngestSummary { accepted: r.accepted, skipped: r.skipped, dropped_late: r.dropped_late })
                .map_err(|e| Error::MalformedPayload(e.to_string()).into())
        },
        |now| {
            let resp = client.post(format!("{base}/api/v1/tick?now={now}")).send().map_err(remote)?;
            let status = resp.status();
            let body = resp.text().map_err(remote)?;
            if !status.is_success() {
                return Err(Error::MalformedPayload(format!("tick answered {status}: {body}")).into());
            }
            let v: serde_json::Value =
                serde_json::from_str(&body).map_err(|e| Error::MalformedPayload(e.to_string()))?;
            Ok(v["sealed"].as_array().map_or(0, |a| a.len() as u64))
        },
    )
}

#[derive(serde::Deserialize)]
struct RemoteSummary {
    accepted: u64,
    skipped: u64,
    dropped_late: u64,
}

fn drive<R: BufRead>(
    reader: R,
    tag: &str,
    interval: i64,
    speed: f64,
    mut ingest: impl FnMut(&[u8]) -> Result<IngestSummary, ServiceError>,
    mut tick: impl FnMut(i64) -> Result<u64, ServiceError>,
) -> Result<ReplayReport, ServiceError> {
    let mut report = ReplayReport::default();
    let mut prev_start: Option<i64> = None;
    let mut last_end: Option<i64> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::StorageFailure)?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |e: Error| match e {
            Error::MalformedPayload(m) => Error::MalformedPayload(format!("line {}: {m}", n + 1)),
            other => other,
        };
        let starts = parse_zipkin_spans(line.as_bytes(), tag)
            .map_err(at_line)?
            .spans
            .iter()
            .map(|s| s.start_ms())
            .fold(None, |acc: Option<(i64, i64)>, t| Some(acc.map_or((t, t), |(lo, hi)| (lo.min(t), hi.max(t)))));

        if let (Some((lo, _)), Some(prev), true) = (starts, prev_start, speed > 0.0) {
            let wait = (lo - prev).max(0) as f64 / speed;
            thread::sleep(Duration::from_secs_f64(wait / 1000.0));
        }

        report.totals.add(ingest(line.as_bytes())?);
        report.lines += 1;
        if let Some((lo, hi)) = starts {
            prev_start = Some(lo);
            let end = hi - hi.rem_euclid(interval) + interval;
            last_end = Some(last_end.map_or(end, |e: i64| e.max(end)));
            report.sealed += tick(lo - lo.rem_euclid(interval))?;
        }
    }
    if let Some(end) = last_end {
        report.sealed += tick(end)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use cloudheat_core::synth::ScenarioSpec;
    use cloudheat_core::MemBlobStore;

    use super::*;
    use crate::config::ServiceConfig;

    fn pipeline() -> Pipeline {
        Pipeline::with_blobs(ServiceConfig::new("unused").manual(), Box::new(MemBlobStore::new())).unwrap()
    }

    #[test]
    fn empty_input_seals_nothing() {
        let p = pipeline();
        let r = replay_into(&p, &b""[..], 0.0).unwrap();
        assert_eq!(r, ReplayReport::default());
        assert!(p.files().is_empty());
    }

    #[test]
    fn generated_run_is_fully_sealed() {
        let spec = ScenarioSpec::builtin("demo", 3, 5 * 60_000).unwrap();
        let mut buf = Vec::new();
        spec.write_ndjson(&mut buf, "app.instance").unwrap();
        let p = pipeline();
        let r = replay_into(&p, &buf[..], 0.0).unwrap();
        assert_eq!(r.lines, 5);
        assert_eq!(r.sealed, 5);
        assert_eq!(r.totals.dropped_late, 0);
        assert_eq!(p.stored_range(), Some((spec.start_ms, spec.start_ms + 5 * 60_000)));
    }

    #[test]
    fn bad_line_is_reported_with_its_number() {
        let p = pipeline();
        let err = replay_into(&p, &b"[]\n{oops\n"[..], 0.0).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
