//! Heatmap matrices and animation frames from stored snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{merge_bundles, IntervalSnapshot};
use crate::error::{Error, Result};
use crate::model::{StatsBundle, View};
use crate::resample::{resample, window_aggregate, ResamplePlan};
use crate::store::{BlobStore, SnapshotStore};

/// Anything that can hand out the snapshots of a time window.
pub trait SnapshotSource {
    /// Snapshots with `from <= interval_start < to`, ascending.
    fn load_window(&self, from: i64, to: i64) -> Result<Vec<IntervalSnapshot>>;
}

impl<B: BlobStore> SnapshotSource for SnapshotStore<B> {
    fn load_window(&self, from: i64, to: i64) -> Result<Vec<IntervalSnapshot>> {
        SnapshotStore::load_window(self, from, to)
    }
}

impl SnapshotSource for [IntervalSnapshot] {
    fn load_window(&self, from: i64, to: i64) -> Result<Vec<IntervalSnapshot>> {
        if from >= to {
            return Err(Error::InvalidWindow { from, to });
        }
        let mut out: Vec<_> =
            self.iter().filter(|s| s.interval_start >= from && s.interval_start < to).cloned().collect();
        out.sort_by_key(|s| s.interval_start);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CallVolume,
    MeanRt,
    MinRt,
    MaxRt,
    StdRt,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::CallVolume => "call_volume",
            Metric::MeanRt => "mean_rt",
            Metric::MinRt => "min_rt",
            Metric::MaxRt => "max_rt",
            Metric::StdRt => "std_rt",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "call_volume" | "count" | "volume" => Ok(Metric::CallVolume),
            "mean_rt" | "mean" => Ok(Metric::MeanRt),
            "min_rt" | "min" => Ok(Metric::MinRt),
            "max_rt" | "max" => Ok(Metric::MaxRt),
            "std_rt" | "std" => Ok(Metric::StdRt),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    Absolute,
    Percent,
}

impl FromStr for ValueMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "absolute" | "abs" => Ok(ValueMode::Absolute),
            "percent" | "pct" => Ok(ValueMode::Percent),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Set of return codes. Besides exact codes, an entry like `5xx` matches
/// every three-digit code in that class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CodeFilter(BTreeSet<String>);

impl CodeFilter {
    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CodeFilter(codes.into_iter().map(|c| c.into().trim().to_string()).filter(|c| !c.is_empty()).collect())
    }

    /// Comma-separated form, as used in query strings.
    pub fn parse_list(list: &str) -> Self {
        Self::new(list.split(','))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn matches(&self, code: &str) -> bool {
        self.0.iter().any(|p| p == code || class_matches(p, code))
    }
}

fn class_matches(pattern: &str, code: &str) -> bool {
    let p = pattern.as_bytes();
    let c = code.as_bytes();
    p.len() == 3
        && c.len() == 3
        && p[0].is_ascii_digit()
        && p[1..].eq_ignore_ascii_case(b"xx")
        && c[0] == p[0]
        && c.iter().all(u8::is_ascii_digit)
}

/// A heatmap request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub view: View,
    pub metric: Metric,
    /// `None` combines all codes.
    #[serde(rename = "codes")]
    pub code_filter: Option<CodeFilter>,
    #[serde(rename = "mode")]
    pub value_mode: ValueMode,
    /// Inclusive lower bound of the value range; `None` is unbounded.
    pub lo: Option<f64>,
    /// Inclusive upper bound of the value range; `None` is unbounded.
    pub hi: Option<f64>,
    /// Epoch ms, inclusive.
    pub from: i64,
    /// Epoch ms, exclusive.
    pub to: i64,
    #[serde(rename = "step")]
    pub step_ms: u64,
}

impl QuerySpec {
    pub fn new(view: View, metric: Metric, from: i64, to: i64, step_ms: u64) -> Self {
        QuerySpec {
            view,
            metric,
            code_filter: None,
            value_mode: ValueMode::Absolute,
            lo: None,
            hi: None,
            from,
            to,
            step_ms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.from >= self.to {
            return Err(Error::spec("window", format!("from ({}) must be before to ({})", self.from, self.to)));
        }
        if self.step_ms == 0 {
            return Err(Error::spec("step", "must be positive"));
        }
        if self.code_filter.as_ref().is_some_and(CodeFilter::is_empty) {
            return Err(Error::spec("codes", "empty code filter"));
        }
        if self.value_mode == ValueMode::Percent {
            if self.metric != Metric::CallVolume {
                return Err(Error::spec("mode", "percent mode requires metric call_volume"));
            }
            if self.code_filter.is_none() {
                return Err(Error::spec("codes", "percent mode requires a return-code filter"));
            }
        }
        for (field, bound) in [("lo", self.lo), ("hi", self.hi)] {
            if bound.is_some_and(f64::is_nan) {
                return Err(Error::spec(field, "not a number"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.lo, self.hi) {
            if lo > hi {
                return Err(Error::spec("range", format!("lo ({lo}) exceeds hi ({hi})")));
            }
        }
        Ok(())
    }

    fn in_range(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi)
    }

    /// Metric value of one cell under this spec, before range masking.
    pub fn cell_value(&self, codes: &BTreeMap<String, StatsBundle>) -> Option<f64> {
        if codes.is_empty() {
            return None;
        }
        let selected =
            codes.iter().filter(|(code, _)| self.code_filter.as_ref().is_none_or(|f| f.matches(code))).map(|(_, b)| b);
        match self.metric {
            Metric::CallVolume => {
                let picked: u64 = selected.map(|b| b.count).sum();
                match self.value_mode {
                    ValueMode::Absolute => Some(picked as f64),
                    ValueMode::Percent => {
                        let total: u64 = codes.values().map(|b| b.count).sum();
                        (total > 0).then(|| (100.0 * picked as f64) / total as f64)
                    }
                }
            }
            rt => {
                let merged = selected.fold(None::<StatsBundle>, |acc, b| {
                    Some(match acc {
                        Some(a) => merge_bundles(&a, b),
                        None => b.clone(),
                    })
                })?;
                let d = merged.duration?;
                Some(match rt {
                    Metric::MeanRt => d.mean_ms,
                    Metric::MinRt => d.min_ms,
                    Metric::MaxRt => d.max_ms,
                    _ => d.std_ms,
                })
            }
        }
    }
}

/// One labeled matrix; `values[y][x]`, `None` where there is no data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapFrame {
    #[serde(rename = "start")]
    pub frame_start: i64,
    #[serde(rename = "end")]
    pub frame_end: i64,
    #[serde(rename = "aggregate")]
    pub is_aggregate: bool,
    #[serde(rename = "x")]
    pub x_labels: Vec<String>,
    #[serde(rename = "y")]
    pub y_labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Frame 0 aggregates the whole window; the rest follow in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapFrameSet {
    #[serde(rename = "spec")]
    pub spec_echo: QuerySpec,
    pub frames: Vec<HeatmapFrame>,
}

/// Load the window, resample it at `spec.step_ms` and project every bin (plus
/// the whole-window aggregate as frame 0) onto the requested matrix.
///
/// Axis labels are the union over the window, sorted, so all frames share
/// dimensions. An empty window yields an empty frame set.
pub fn build_frames<S: SnapshotSource + ?Sized>(spec: &QuerySpec, source: &S) -> Result<HeatmapFrameSet> {
    spec.validate()?;
    let snapshots = source.load_window(spec.from, spec.to)?;
    let empty = HeatmapFrameSet { spec_echo: spec.clone(), frames: Vec::new() };
    let Some(first) = snapshots.first() else {
        return Ok(empty);
    };
    let base = first.interval_length_ms;
    if let Some(odd) = snapshots.iter().find(|s| s.interval_length_ms != base) {
        return Err(Error::MisalignedSnapshot {
            start: odd.interval_start,
            reason: format!("mixed interval lengths {} and {base}", odd.interval_length_ms),
        });
    }
    if !spec.step_ms.is_multiple_of(base) {
        return Err(Error::spec("step", format!("must be a multiple of the {base} ms base interval")));
    }
    let plan = ResamplePlan::covering(base, spec.step_ms, spec.from, spec.to)?;
    let bins = resample(&snapshots, &plan)?;
    let whole = window_aggregate(&snapshots)?;

    let cells = whole.cells(spec.view);
    let y_labels: Vec<String> = cells.keys().cloned().collect();
    let x_labels: Vec<String> =
        cells.values().flat_map(|row| row.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();

    let project = |snap: &IntervalSnapshot, start: i64, end: i64, is_aggregate: bool| {
        let cells = snap.cells(spec.view);
        let values = y_labels
            .iter()
            .map(|y| {
                x_labels
                    .iter()
                    .map(|x| {
                        let codes = cells.get(y)?.get(x)?;
                        spec.cell_value(codes).filter(|v| spec.in_range(*v))
                    })
                    .collect()
            })
            .collect();
        HeatmapFrame {
            frame_start: start,
            frame_end: end,
            is_aggregate,
            x_labels: x_labels.clone(),
            y_labels: y_labels.clone(),
            values,
        }
    };

    let mut frames = Vec::with_capacity(bins.len() + 1);
    frames.push(project(&whole, spec.from, spec.to, true));
    frames.extend(bins.iter().map(|b| project(b, b.interval_start, b.interval_end(), false)));
    Ok(HeatmapFrameSet { frames, ..empty })
}

/// Tooltip payload for one tile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellHit {
    pub x_id: String,
    pub y_id: String,
    pub x_index: usize,
    pub y_index: usize,
    /// `None` when the tile exists but has no data.
    pub value: Option<f64>,
}

/// Look a tile up by its labels. `None` when either label is unknown.
pub fn cell_lookup(frame: &HeatmapFrame, x_id: &str, y_id: &str) -> Option<CellHit> {
    let x_index = frame.x_labels.binary_search_by(|l| l.as_str().cmp(x_id)).ok()?;
    let y_index = frame.y_labels.binary_search_by(|l| l.as_str().cmp(y_id)).ok()?;
    Some(CellHit {
        x_id: x_id.to_string(),
        y_id: y_id.to_string(),
        x_index,
        y_index,
        value: frame.values[y_index][x_index],
    })
}

/// Distinct labels observed in a set of snapshots, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub data_centers: Vec<String>,
    pub microservices: Vec<String>,
    pub callers: Vec<String>,
    pub callees: Vec<String>,
    pub return_codes: Vec<String>,
}

impl Catalog {
    pub fn from_snapshots(snapshots: &[IntervalSnapshot]) -> Self {
        let mut dcs = BTreeSet::new();
        let mut services = BTreeSet::new();
        let mut callers = BTreeSet::new();
        let mut callees = BTreeSet::new();
        let mut codes = BTreeSet::new();
        for s in snapshots {
            for (y, x, code, _) in s.bundles(View::DatacenterServices) {
                dcs.insert(y);
                services.insert(x);
                codes.insert(code);
            }
            for (y, x, code, _) in s.bundles(View::CallerCallee) {
                callers.insert(y);
                callees.insert(x);
                codes.insert(code);
            }
        }
        let own = |set: BTreeSet<&str>| set.into_iter().map(String::from).collect();
        Catalog {
            data_centers: own(dcs),
            microservices: own(services),
            callers: own(callers),
            callees: own(callees),
            return_codes: own(codes),
        }
    }
}
