//! In-browser heatmap explorer. A scenario is generated and aggregated in
//! memory; the page then asks for heatmaps and inspects single cells.

use cloudheat_core::query::Catalog;
use cloudheat_core::synth::{ScenarioSpec, MINUTE_MS};
use cloudheat_core::{
    aggregate_interval, build_frames, cell_lookup, CodeFilter, HeatmapFrameSet, IntervalSnapshot, Metric, QuerySpec,
    ValueMode, View,
};
use serde::Deserialize;
use wasm_bindgen::prelude::*;

/// Heatmap request as sent by the page. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct PageQuery {
    pub view: Option<String>,
    pub metric: Option<String>,
    /// Comma-separated codes or classes.
    pub codes: Option<String>,
    pub mode: Option<String>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub step_minutes: Option<u64>,
}

/// Plain Rust state behind the bindings.
pub struct Explorer {
    snapshots: Vec<IntervalSnapshot>,
    from: i64,
    to: i64,
    last: Option<HeatmapFrameSet>,
}

impl Explorer {
    pub fn generate(scenario: &str, seed: u64, minutes: u32) -> Result<Self, String> {
        let spec = ScenarioSpec::builtin(scenario, seed, u64::from(minutes.max(1)) * MINUTE_MS as u64)
            .map_err(|e| e.to_string())?;
        let mut snapshots = Vec::with_capacity(minutes as usize);
        for batch in spec.batches().map_err(|e| e.to_string())? {
            if batch.spans.is_empty() {
                continue;
            }
            let s =
                aggregate_interval(&batch.spans, batch.minute_start_ms, MINUTE_MS as u64).map_err(|e| e.to_string())?;
            snapshots.push(s);
        }
        Ok(Explorer { snapshots, from: spec.start_ms, to: spec.start_ms + spec.duration_ms as i64, last: None })
    }

    pub fn window(&self) -> (i64, i64) {
        (self.from, self.to)
    }

    pub fn spec(&self, q: &PageQuery) -> Result<QuerySpec, String> {
        let view = q.view.as_deref().map(str::parse::<View>).transpose()?;
        let metric = q.metric.as_deref().map(str::parse::<Metric>).transpose()?;
        let step = q.step_minutes.unwrap_or(1).max(1) * MINUTE_MS as u64;
        let mut spec = QuerySpec::new(
            view.unwrap_or(View::DatacenterServices),
            metric.unwrap_or(Metric::CallVolume),
            self.from,
            self.to,
            step,
        );
        if let Some(m) = q.mode.as_deref() {
            spec.value_mode = m.parse::<ValueMode>()?;
        }
        spec.code_filter = q.codes.as_deref().filter(|c| !c.trim().is_empty()).map(CodeFilter::parse_list);
        spec.lo = q.lo;
        spec.hi = q.hi;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn heatmap(&mut self, q: &PageQuery) -> Result<&HeatmapFrameSet, String> {
        let spec = self.spec(q)?;
        let set = build_frames(&spec, self.snapshots.as_slice()).map_err(|e| e.to_string())?;
        Ok(self.last.insert(set))
    }

    /// Cell of the last computed heatmap, as JSON; `null` when absent.
    pub fn lookup(&self, frame: usize, x: &str, y: &str) -> String {
        let hit = self.last.as_ref().and_then(|s| s.frames.get(frame)).and_then(|f| cell_lookup(f, x, y));
        serde_json::to_string(&hit).unwrap_or_else(|_| "null".into())
    }

    pub fn catalog(&self) -> Catalog {
        Catalog::from_snapshots(&self.snapshots)
    }
}

/// Handle exported to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    inner: Explorer,
}

#[wasm_bindgen]
impl Demo {
    /// Generate `minutes` of a built-in scenario.
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, seed: u32, minutes: u32) -> Result<Demo, JsValue> {
        Explorer::generate(scenario, u64::from(seed), minutes)
            .map(|inner| Demo { inner })
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn scenarios() -> String {
        serde_json::to_string(&ScenarioSpec::BUILTINS).unwrap_or_default()
    }

    /// Heatmap frames as JSON for a JSON-encoded query.
    pub fn heatmap(&mut self, query_json: &str) -> Result<String, JsValue> {
        let q: PageQuery = serde_json::from_str(query_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
        let set = self.inner.heatmap(&q).map_err(|e| JsValue::from_str(&e))?;
        serde_json::to_string(set).map_err(|e| JsValue::from_str(&e.to_string()))
    }

    /// Details of one cell of the last heatmap.
    pub fn lookup(&self, frame: usize, x: &str, y: &str) -> String {
        self.inner.lookup(frame, x, y)
    }

    pub fn catalog(&self) -> String {
        serde_json::to_string(&self.inner.catalog()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_limit_share_shows_in_percent_mode() {
        let mut ex = Explorer::generate("rate-limit", 7, 30).unwrap();
        let q = PageQuery { codes: Some("429".into()), mode: Some("percent".into()), ..Default::default() };
        let frame0 = ex.heatmap(&q).unwrap().frames[0].clone();
        let hit: CellHitView = serde_json::from_str(&ex.lookup(0, "svc-ratelimited", &frame0.y_labels[0])).unwrap();
        assert!((hit.value.unwrap() - 40.0).abs() < 3.0, "{hit:?}");
    }

    #[test]
    fn step_controls_frame_count() {
        let mut ex = Explorer::generate("demo", 1, 30).unwrap();
        let q = PageQuery { step_minutes: Some(10), ..Default::default() };
        assert_eq!(ex.heatmap(&q).unwrap().frames.len(), 4);
        assert_eq!(ex.catalog().data_centers.len(), 3);
    }

    #[test]
    fn bad_query_is_an_error() {
        let mut ex = Explorer::generate("demo", 1, 5).unwrap();
        let q = PageQuery { mode: Some("percent".into()), ..Default::default() };
        assert!(ex.heatmap(&q).is_err());
        assert_eq!(ex.lookup(0, "nope", "nope"), "null");
    }

    #[derive(Debug, Deserialize)]
    struct CellHitView {
        value: Option<f64>,
    }
}
