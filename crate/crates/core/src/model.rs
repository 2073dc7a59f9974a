//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Return code assigned to spans that carry none.
pub const PLACEHOLDER_RETURN_CODE: &str = "unknown";

/// One caller -> callee request observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceSpan {
    pub trace_id: String,
    pub span_id: String,
    /// Unix epoch microseconds.
    pub start_time_us: i64,
    pub duration_us: u64,
    pub caller_id: String,
    pub callee_id: String,
    /// Deployment instance; a data center in the reference deployment.
    pub app_instance_id: String,
    pub return_code: String,
}

impl TraceSpan {
    /// Start time truncated to epoch milliseconds.
    pub fn start_ms(&self) -> i64 {
        self.start_time_us.div_euclid(1000)
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_us as f64 / 1000.0
    }
}

/// Trim a raw return code, substituting the placeholder when it is missing
/// or blank. Non-HTTP codes such as `-1` pass through unchanged.
pub fn normalize_return_code(raw: Option<&str>) -> String {
    or_placeholder(raw)
}

pub(crate) fn or_placeholder(raw: Option<&str>) -> String {
    match raw.map(str::trim) {
        Some(v) if !v.is_empty() => v.to_string(),
        _ => PLACEHOLDER_RETURN_CODE.to_string(),
    }
}

/// The two heatmap projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// y = app instance (data center), x = serving microservice.
    DatacenterServices,
    /// y = caller microservice, x = callee microservice.
    CallerCallee,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::DatacenterServices => "datacenter_services",
            View::CallerCallee => "caller_callee",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "datacenter_services" | "datacenter-services" | "dc" => Ok(View::DatacenterServices),
            "caller_callee" | "caller-callee" | "caller_callee_pairs" | "cc" => Ok(View::CallerCallee),
            other => Err(format!("unknown view `{other}`")),
        }
    }
}

/// Address of one heatmap tile. Labels are case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub view: View,
    pub y_id: String,
    pub x_id: String,
}

impl CellKey {
    pub fn for_span(view: View, span: &TraceSpan) -> Self {
        let (y, x) = match view {
            View::DatacenterServices => (&span.app_instance_id, &span.callee_id),
            View::CallerCallee => (&span.caller_id, &span.callee_id),
        };
        CellKey { view, y_id: y.clone(), x_id: x.clone() }
    }
}

/// Response-time statistics in milliseconds. Only exists for non-empty groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationStats {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
}

/// Named statistics for one (cell, return code) pair.
///
/// `count == 0` only occurs for bundles read from foreign files that do not
/// carry a call volume; such bundles never have duration statistics.
/// Statistic names outside the canonical set are kept in `extra`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatsBundle {
    pub count: u64,
    pub duration: Option<DurationStats>,
    /// Share of this return code within its cell, in percent.
    pub pct: Option<f64>,
    pub extra: BTreeMap<String, f64>,
}

impl StatsBundle {
    /// Statistics over raw durations (ms). Two-pass for numerical stability.
    pub fn from_durations_ms(durations: &[f64]) -> Self {
        if durations.is_empty() {
            return StatsBundle::default();
        }
        let n = durations.len() as f64;
        let mean = durations.iter().sum::<f64>() / n;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sq = 0.0;
        for &d in durations {
            min = min.min(d);
            max = max.max(d);
            sq += (d - mean) * (d - mean);
        }
        let std = if durations.len() == 1 { 0.0 } else { (sq / n).sqrt() };
        StatsBundle {
            count: durations.len() as u64,
            duration: Some(DurationStats { mean_ms: mean.clamp(min, max), min_ms: min, max_ms: max, std_ms: std }),
            pct: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn mean_ms(&self) -> Option<f64> {
        self.duration.map(|d| d.mean_ms)
    }

    pub fn min_ms(&self) -> Option<f64> {
        self.duration.map(|d| d.min_ms)
    }

    pub fn max_ms(&self) -> Option<f64> {
        self.duration.map(|d| d.max_ms)
    }

    pub fn std_ms(&self) -> Option<f64> {
        self.duration.map(|d| d.std_ms)
    }
}
