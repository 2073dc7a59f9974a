//! Nested JSON snapshot encoding.
//!
//! ```text
//! {"<unix ms>":[{"caller_callee_pairs":{caller:{callee:{code:{stat:value}}}},
//!                "datacenter_services":{instance:{service:{code:{stat:value}}}},
//!                "interval_length_ms":60000}]}
//! ```
//!
//! Output is canonical: keys sorted at every level, no whitespace, reals in
//! their shortest round-trip form. Decoding gives back the exact values and
//! re-encoding a decoded document is byte-identical to the document.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::{Map, Value};

use crate::aggregate::{CellMap, IntervalSnapshot};
use crate::error::{Error, Result};
use crate::model::{DurationStats, StatsBundle};

pub const DATACENTER_SERVICES: &str = "datacenter_services";
pub const CALLER_CALLEE_PAIRS: &str = "caller_callee_pairs";
pub const INTERVAL_LENGTH: &str = "interval_length_ms";
/// Length assumed for documents that do not carry `interval_length_ms`.
pub const DEFAULT_INTERVAL_MS: u64 = 60_000;

const COUNT: &str = "count";
const MEAN: &str = "mean_ms";
const MIN: &str = "min_ms";
const MAX: &str = "max_ms";
const STD: &str = "std_ms";
const PCT: &str = "pct";

/// Render a real in the shortest decimal form that parses back to the same
/// bits, always with a fractional part and never in exponent notation.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    if x == 0.0 {
        return "0.0".to_string();
    }
    let mut s = format!("{x}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

fn push_key(out: &mut String, key: &str) {
    // serde_json escapes exactly as the parser expects
    out.push_str(&serde_json::to_string(key).expect("string key"));
    out.push(':');
}

enum Num {
    Int(u64),
    Real(f64),
}

fn write_bundle(out: &mut String, b: &StatsBundle) {
    let mut fields: BTreeMap<&str, Num> = b.extra.iter().map(|(k, v)| (k.as_str(), Num::Real(*v))).collect();
    if b.count > 0 {
        fields.insert(COUNT, Num::Int(b.count));
    }
    if let Some(d) = b.duration {
        fields.insert(MEAN, Num::Real(d.mean_ms));
        fields.insert(MIN, Num::Real(d.min_ms));
        fields.insert(MAX, Num::Real(d.max_ms));
        fields.insert(STD, Num::Real(d.std_ms));
    }
    if let Some(p) = b.pct {
        fields.insert(PCT, Num::Real(p));
    }
    out.push('{');
    for (i, (k, v)) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_key(out, k);
        match v {
            Num::Int(n) => write!(out, "{n}").expect("write to string"),
            Num::Real(x) => out.push_str(&format_real(*x)),
        }
    }
    out.push('}');
}

fn write_map<V>(out: &mut String, map: &BTreeMap<String, V>, mut value: impl FnMut(&mut String, &V)) {
    out.push('{');
    for (i, (k, v)) in map.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_key(out, k);
        value(out, v);
    }
    out.push('}');
}

fn write_cells(out: &mut String, cells: &CellMap) {
    write_map(out, cells, |out, row| write_map(out, row, |out, codes| write_map(out, codes, write_bundle)));
}

/// `"<ts>":[{...}]` without the enclosing braces, so entries can be joined
/// into multi-snapshot files.
pub(crate) fn serialize_entry(s: &IntervalSnapshot) -> String {
    let mut out = String::new();
    push_key(&mut out, &s.interval_start.to_string());
    out.push_str("[{");
    push_key(&mut out, CALLER_CALLEE_PAIRS);
    write_cells(&mut out, &s.caller_callee_pairs);
    out.push(',');
    push_key(&mut out, DATACENTER_SERVICES);
    write_cells(&mut out, &s.datacenter_services);
    out.push(',');
    push_key(&mut out, INTERVAL_LENGTH);
    write!(out, "{}", s.interval_length_ms).expect("write to string");
    out.push_str("}]");
    out
}

pub(crate) fn join_entries<'a>(entries: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from("{");
    for (i, e) in entries.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(e);
    }
    out.push('}');
    out
}

/// Encode one snapshot as a standalone document.
pub fn serialize_snapshot(s: &IntervalSnapshot) -> String {
    join_entries([serialize_entry(s).as_str()])
}

/// Encode several snapshots (in the given order) as one document.
pub fn serialize_snapshots(snapshots: &[IntervalSnapshot]) -> String {
    let entries: Vec<String> = snapshots.iter().map(serialize_entry).collect();
    join_entries(entries.iter().map(String::as_str))
}

fn key_path(parent: &str, key: &str) -> String {
    format!("{parent}[{}]", serde_json::to_string(key).expect("string key"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))
}

fn parse_bundle(v: &Value, path: &str) -> Result<StatsBundle> {
    let mut stats: BTreeMap<String, f64> = BTreeMap::new();
    let mut count = 0u64;
    for (name, value) in as_object(v, path)? {
        let here = key_path(path, name);
        if name == COUNT {
            count = match value.as_u64() {
                Some(n) => n,
                None => match value.as_f64() {
                    Some(x) if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 => x as u64,
                    _ => return Err(Error::schema(here, "count must be a non-negative integer")),
                },
            };
        } else {
            let x = value.as_f64().ok_or_else(|| Error::schema(here, "statistic value must be a number"))?;
            stats.insert(name.clone(), x);
        }
    }
    let pct = stats.remove(PCT);
    let duration = match (count > 0, stats.get(MEAN), stats.get(MIN), stats.get(MAX), stats.get(STD)) {
        (true, Some(&mean_ms), Some(&min_ms), Some(&max_ms), Some(&std_ms)) => {
            for k in [MEAN, MIN, MAX, STD] {
                stats.remove(k);
            }
            Some(DurationStats { mean_ms, min_ms, max_ms, std_ms })
        }
        // incomplete sets stay as named statistics
        _ => None,
    };
    Ok(StatsBundle { count, duration, pct, extra: stats })
}

fn parse_cells(v: &Value, path: &str) -> Result<CellMap> {
    let mut cells = CellMap::new();
    for (y, row) in as_object(v, path)? {
        let row_path = key_path(path, y);
        let mut parsed_row = BTreeMap::new();
        for (x, codes) in as_object(row, &row_path)? {
            let cell_path = key_path(&row_path, x);
            let mut parsed_codes = BTreeMap::new();
            for (code, bundle) in as_object(codes, &cell_path)? {
                parsed_codes.insert(code.clone(), parse_bundle(bundle, &key_path(&cell_path, code))?);
            }
            parsed_row.insert(x.clone(), parsed_codes);
        }
        cells.insert(y.clone(), parsed_row);
    }
    Ok(cells)
}

/// Decode a document into snapshots ordered by start time. Statistic names
/// outside the canonical set are kept in [`StatsBundle::extra`].
pub fn parse_snapshot(text: &str) -> Result<Vec<IntervalSnapshot>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::schema("$", e.to_string()))?;
    let top = as_object(&doc, "$")?;
    let mut out = Vec::with_capacity(top.len());
    for (ts, entries) in top {
        let path = key_path("$", ts);
        let interval_start: i64 =
            ts.parse().map_err(|_| Error::schema(&path, "timestamp key must be Unix milliseconds"))?;
        let entries = entries.as_array().ok_or_else(|| Error::schema(&path, "expected an array"))?;
        let [entry] = entries.as_slice() else {
            return Err(Error::schema(&path, "expected exactly one element"));
        };
        let path = format!("{path}[0]");
        let body = as_object(entry, &path)?;
        let cells = |key: &str| match body.get(key) {
            Some(v) => parse_cells(v, &format!("{path}.{key}")),
            None => Ok(CellMap::new()),
        };
        let interval_length_ms = match body.get(INTERVAL_LENGTH) {
            None => DEFAULT_INTERVAL_MS,
            Some(v) => v
                .as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::schema(format!("{path}.{INTERVAL_LENGTH}"), "must be a positive integer"))?,
        };
        out.push(IntervalSnapshot {
            interval_start,
            interval_length_ms,
            datacenter_services: cells(DATACENTER_SERVICES)?,
            caller_callee_pairs: cells(CALLER_CALLEE_PAIRS)?,
        });
    }
    out.sort_by_key(|s| s.interval_start);
    Ok(out)
}
