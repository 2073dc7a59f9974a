//! Per-interval folding of spans into per-cell, per-return-code statistics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{DurationStats, StatsBundle, TraceSpan, View};

/// `y label -> x label -> return code -> statistics`.
pub type CellMap = BTreeMap<String, BTreeMap<String, BTreeMap<String, StatsBundle>>>;

/// All aggregates for one half-open time bin `[interval_start, interval_start + interval_length_ms)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSnapshot {
    /// Unix epoch milliseconds.
    pub interval_start: i64,
    pub interval_length_ms: u64,
    /// app instance -> microservice -> code.
    pub datacenter_services: CellMap,
    /// caller -> callee -> code.
    pub caller_callee_pairs: CellMap,
}

impl IntervalSnapshot {
    pub fn empty(interval_start: i64, interval_length_ms: u64) -> Self {
        IntervalSnapshot {
            interval_start,
            interval_length_ms,
            datacenter_services: CellMap::new(),
            caller_callee_pairs: CellMap::new(),
        }
    }

    pub fn interval_end(&self) -> i64 {
        self.interval_start + self.interval_length_ms as i64
    }

    pub fn cells(&self, view: View) -> &CellMap {
        match view {
            View::DatacenterServices => &self.datacenter_services,
            View::CallerCallee => &self.caller_callee_pairs,
        }
    }

    pub fn cells_mut(&mut self, view: View) -> &mut CellMap {
        match view {
            View::DatacenterServices => &mut self.datacenter_services,
            View::CallerCallee => &mut self.caller_callee_pairs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.datacenter_services.is_empty() && self.caller_callee_pairs.is_empty()
    }

    /// Iterate `(y, x, code, bundle)` over one view.
    pub fn bundles(&self, view: View) -> impl Iterator<Item = (&str, &str, &str, &StatsBundle)> {
        self.cells(view).iter().flat_map(|(y, row)| {
            row.iter().flat_map(move |(x, codes)| {
                codes.iter().map(move |(code, b)| (y.as_str(), x.as_str(), code.as_str(), b))
            })
        })
    }

    /// Fold `other`'s bundles into this snapshot with [`merge_bundles`].
    /// Interval metadata is left untouched; callers own it.
    pub(crate) fn absorb(&mut self, other: &IntervalSnapshot) {
        for view in [View::DatacenterServices, View::CallerCallee] {
            let target = self.cells_mut(view);
            for (y, row) in other.cells(view) {
                let target_row = target.entry(y.clone()).or_default();
                for (x, codes) in row {
                    let target_cell = target_row.entry(x.clone()).or_default();
                    for (code, bundle) in codes {
                        match target_cell.get_mut(code) {
                            Some(existing) => *existing = merge_bundles(existing, bundle),
                            None => {
                                target_cell.insert(code.clone(), bundle.clone());
                            }
                        }
                    }
                }
            }
        }
    }

    /// Recompute every bundle's share of its cell from counts.
    pub fn recompute_pct(&mut self) {
        for view in [View::DatacenterServices, View::CallerCallee] {
            for row in self.cells_mut(view).values_mut() {
                for codes in row.values_mut() {
                    let total: u64 = codes.values().map(|b| b.count).sum();
                    for b in codes.values_mut() {
                        b.pct = (total > 0).then(|| 100.0 * b.count as f64 / total as f64);
                    }
                }
            }
        }
    }
}

/// Aggregate spans that all start inside `[interval_start, interval_start + interval_length_ms)`.
///
/// Data-center cells attribute each span to its callee. Standard deviations
/// are population (divide by N) so that bundles compose with [`merge_bundles`].
pub fn aggregate_interval(
    spans: &[TraceSpan],
    interval_start: i64,
    interval_length_ms: u64,
) -> Result<IntervalSnapshot> {
    if interval_length_ms == 0 {
        return Err(Error::InvalidInterval);
    }
    let bin_end = interval_start + interval_length_ms as i64;
    type Groups<'a> = BTreeMap<(&'a str, &'a str, &'a str), Vec<f64>>;
    let mut dc: Groups = BTreeMap::new();
    let mut cc: Groups = BTreeMap::new();
    for span in spans {
        let start_ms = span.start_ms();
        if start_ms < interval_start || start_ms >= bin_end {
            return Err(Error::OutOfBinSpan {
                span_id: span.span_id.clone(),
                start_ms,
                bin_start: interval_start,
                bin_end,
            });
        }
        let ms = span.duration_ms();
        let code = span.return_code.as_str();
        dc.entry((&span.app_instance_id, &span.callee_id, code)).or_default().push(ms);
        cc.entry((&span.caller_id, &span.callee_id, code)).or_default().push(ms);
    }

    let mut snapshot = IntervalSnapshot::empty(interval_start, interval_length_ms);
    for (groups, view) in [(dc, View::DatacenterServices), (cc, View::CallerCallee)] {
        let cells = snapshot.cells_mut(view);
        for ((y, x, code), durations) in groups {
            cells
                .entry(y.to_string())
                .or_default()
                .entry(x.to_string())
                .or_default()
                .insert(code.to_string(), StatsBundle::from_durations_ms(&durations));
        }
    }
    snapshot.recompute_pct();
    Ok(snapshot)
}

/// Pooled ("compound") combination of two bundles.
///
/// `pct` and unknown named statistics do not survive: neither can be pooled
/// from the inputs alone. A side with `count == 0` contributes nothing.
pub fn merge_bundles(a: &StatsBundle, b: &StatsBundle) -> StatsBundle {
    if b.count == 0 {
        return StatsBundle { pct: None, extra: BTreeMap::new(), ..a.clone() };
    }
    if a.count == 0 {
        return StatsBundle { pct: None, extra: BTreeMap::new(), ..b.clone() };
    }
    let count = a.count + b.count;
    let duration = match (a.duration, b.duration) {
        (Some(da), Some(db)) => Some(pool(a.count, &da, b.count, &db)),
        _ => None,
    };
    StatsBundle { count, duration, pct: None, extra: BTreeMap::new() }
}

fn pool(na: u64, a: &DurationStats, nb: u64, b: &DurationStats) -> DurationStats {
    let (wa, wb) = (na as f64, nb as f64);
    let n = wa + wb;
    let min = a.min_ms.min(b.min_ms);
    let max = a.max_ms.max(b.max_ms);
    let mean = ((wa * a.mean_ms + wb * b.mean_ms) / n).clamp(min, max);
    let da = a.mean_ms - mean;
    let db = b.mean_ms - mean;
    let var = (wa * (a.std_ms * a.std_ms + da * da) + wb * (b.std_ms * b.std_ms + db * db)) / n;
    DurationStats { mean_ms: mean, min_ms: min, max_ms: max, std_ms: var.max(0.0).sqrt() }
}
