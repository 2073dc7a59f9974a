//! Deterministic synthetic span streams with injectable faults.
//!
//! Every minute of a scenario draws, per caller->callee edge and per data
//! center hosting the callee, a Poisson number of calls at the edge's rate.
//! Durations are log-normal around the edge median. Fault windows then
//! rewrite return codes, latencies or rates for matching calls. Each minute
//! has its own ChaCha stream derived from the seed, so minutes can be
//! generated independently and in any order.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TraceSpan;
use crate::zipkin::to_zipkin_json;

pub const MINUTE_MS: i64 = 60_000;
/// Hour-aligned epoch (2023-11-14T22:00:00Z) used when a scenario omits its start.
pub const DEFAULT_START_MS: i64 = 1_700_000_000_000 - 1_700_000_000_000 % (60 * MINUTE_MS);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub data_center: String,
    pub microservice: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub median_ms: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub caller: String,
    pub callee: String,
    /// Mean calls per minute per data center.
    pub rate_per_min: f64,
    pub latency: LatencyModel,
    /// Baseline return-code weights; `{"200": 1}` when empty.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub codes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    /// Each affected call answers 429 with probability `magnitude`.
    #[serde(rename = "RATE_LIMIT_429")]
    RateLimit429,
    /// Each affected call answers 500 with probability `magnitude`.
    #[serde(rename = "SERVER_ERROR_5XX")]
    ServerError5xx,
    /// Latency median replaced by `magnitude` milliseconds.
    #[serde(rename = "LATENCY_DEGRADE")]
    LatencyDegrade,
    /// Each affected call returns `-1` with probability `magnitude`.
    #[serde(rename = "NON_HTTP_CODE")]
    NonHttpCode,
    /// Call rate multiplied by `magnitude`.
    #[serde(rename = "LOW_TRAFFIC")]
    LowTraffic,
}

/// Calls matched by a fault. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caller: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callee: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_center: Option<String>,
}

impl FaultTarget {
    pub fn callee(name: &str) -> Self {
        FaultTarget { callee: Some(name.into()), ..Default::default() }
    }

    pub fn edge(caller: &str, callee: &str) -> Self {
        FaultTarget { caller: Some(caller.into()), callee: Some(callee.into()), data_center: None }
    }

    fn matches(&self, caller: &str, callee: &str, dc: &str) -> bool {
        let ok = |want: &Option<String>, got: &str| want.as_deref().is_none_or(|w| w == got);
        ok(&self.caller, caller) && ok(&self.callee, callee) && ok(&self.data_center, dc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub kind: FaultKind,
    pub target: FaultTarget,
    pub magnitude: f64,
    /// Offset from the scenario start, inclusive. Defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_ms: Option<u64>,
    /// Offset from the scenario start, exclusive. Defaults to the duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_ms: Option<u64>,
}

impl Fault {
    pub fn whole_run(kind: FaultKind, target: FaultTarget, magnitude: f64) -> Self {
        Fault { kind, target, magnitude, from_ms: None, to_ms: None }
    }
}

/// Declarative scenario, read from and written to JSON config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ms: i64,
    pub duration_ms: u64,
    pub deployments: Vec<Deployment>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

fn default_start() -> i64 {
    DEFAULT_START_MS
}

/// Spans of one scenario minute, sorted by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteBatch {
    pub minute_start_ms: i64,
    pub spans: Vec<TraceSpan>,
}

struct ActiveFault<'a> {
    fault: &'a Fault,
    from_us: i64,
    to_us: i64,
}

impl ActiveFault<'_> {
    fn covers(&self, t_us: i64) -> bool {
        t_us >= self.from_us && t_us < self.to_us
    }
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn minutes(&self) -> u64 {
        self.duration_ms / MINUTE_MS as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.duration_ms == 0 || !self.duration_ms.is_multiple_of(MINUTE_MS as u64) {
            return bad(format!("duration {} ms is not a positive number of minutes", self.duration_ms));
        }
        if self.start_ms.rem_euclid(MINUTE_MS) != 0 {
            return bad("start must be minute-aligned".into());
        }
        for e in &self.edges {
            let name = format!("{}->{}", e.caller, e.callee);
            if e.caller.trim().is_empty() || e.callee.trim().is_empty() {
                return bad("edge endpoints must be named".into());
            }
            if !(e.rate_per_min.is_finite() && e.rate_per_min > 0.0) {
                return bad(format!("edge {name}: rate must be positive"));
            }
            if !(e.latency.median_ms.is_finite() && e.latency.median_ms > 0.0)
                || !(e.latency.sigma.is_finite() && e.latency.sigma >= 0.0)
            {
                return bad(format!("edge {name}: invalid latency model"));
            }
            if !self.deployments.iter().any(|d| d.microservice == e.callee) {
                return bad(format!("edge {name}: callee is not deployed anywhere"));
            }
            if !e.codes.is_empty() && WeightedIndex::new(e.codes.values().copied()).is_err() {
                return bad(format!("edge {name}: invalid code weights"));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            let (from, to) = (f.from_ms.unwrap_or(0), f.to_ms.unwrap_or(self.duration_ms));
            if from >= to || to > self.duration_ms {
                return bad(format!("fault {i}: range [{from}, {to}) outside the scenario"));
            }
            let probability =
                matches!(f.kind, FaultKind::RateLimit429 | FaultKind::ServerError5xx | FaultKind::NonHttpCode);
            let valid = match f.kind {
                _ if !f.magnitude.is_finite() => false,
                FaultKind::LatencyDegrade => f.magnitude > 0.0,
                _ if probability => (0.0..=1.0).contains(&f.magnitude),
                _ => f.magnitude >= 0.0,
            };
            if !valid {
                return bad(format!("fault {i}: magnitude {} out of range", f.magnitude));
            }
            let hits =
                self.edges.iter().any(|e| self.hosts(&e.callee).any(|dc| f.target.matches(&e.caller, &e.callee, dc)));
            if !hits {
                return bad(format!("fault {i}: target matches no edge"));
            }
        }
        Ok(())
    }

    fn hosts<'a>(&'a self, service: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.deployments.iter().filter(move |d| d.microservice == service).map(|d| d.data_center.as_str())
    }

    fn active_faults(&self) -> Vec<ActiveFault<'_>> {
        let origin = self.start_ms * 1000;
        self.faults
            .iter()
            .map(|fault| ActiveFault {
                fault,
                from_us: origin + fault.from_ms.unwrap_or(0) as i64 * 1000,
                to_us: origin + fault.to_ms.unwrap_or(self.duration_ms) as i64 * 1000,
            })
            .collect()
    }

    /// Spans of minute `index` (0-based).
    pub fn minute(&self, index: u64) -> MinuteBatch {
        let faults = self.active_faults();
        self.minute_with(index, &faults)
    }

    fn minute_with(&self, index: u64, faults: &[ActiveFault<'_>]) -> MinuteBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let minute_start_ms = self.start_ms + index as i64 * MINUTE_MS;
        let minute_us = minute_start_ms * 1000;
        let mut spans = Vec::new();
        for edge in &self.edges {
            let codes: Vec<(&str, f64)> = if edge.codes.is_empty() {
                vec![("200", 1.0)]
            } else {
                edge.codes.iter().map(|(c, w)| (c.as_str(), *w)).collect()
            };
            let picker = WeightedIndex::new(codes.iter().map(|c| c.1)).expect("validated weights");
            for dc in self.hosts(&edge.callee) {
                let applies = |f: &&ActiveFault| f.fault.target.matches(&edge.caller, &edge.callee, dc);
                let rate = faults
                    .iter()
                    .filter(applies)
                    .filter(|f| f.fault.kind == FaultKind::LowTraffic && f.covers(minute_us))
                    .fold(edge.rate_per_min, |r, f| r * f.fault.magnitude);
                let calls =
                    if rate > 0.0 { Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64 } else { 0 };
                for _ in 0..calls {
                    let start_us = minute_us + rng.random_range(0..MINUTE_MS * 1000);
                    let live: Vec<&Fault> =
                        faults.iter().filter(applies).filter(|f| f.covers(start_us)).map(|f| f.fault).collect();
                    let median = live
                        .iter()
                        .filter(|f| f.kind == FaultKind::LatencyDegrade)
                        .map(|f| f.magnitude)
                        .next_back()
                        .unwrap_or(edge.latency.median_ms);
                    let ms =
                        LogNormal::new(median.ln(), edge.latency.sigma).expect("validated latency").sample(&mut rng);
                    let mut code = codes[picker.sample(&mut rng)].0;
                    for f in &live {
                        let replacement = match f.kind {
                            FaultKind::RateLimit429 => "429",
                            FaultKind::ServerError5xx => "500",
                            FaultKind::NonHttpCode => "-1",
                            _ => continue,
                        };
                        if rng.random::<f64>() < f.magnitude {
                            code = replacement;
                        }
                    }
                    spans.push(TraceSpan {
                        trace_id: format!("{:032x}", rng.random::<u128>()),
                        span_id: format!("{:016x}", rng.random::<u64>()),
                        start_time_us: start_us,
                        duration_us: (ms * 1000.0).round() as u64,
                        caller_id: edge.caller.clone(),
                        callee_id: edge.callee.clone(),
                        app_instance_id: dc.to_string(),
                        return_code: code.to_string(),
                    });
                }
            }
        }
        spans.sort_by(|a, b| (a.start_time_us, &a.span_id).cmp(&(b.start_time_us, &b.span_id)));
        MinuteBatch { minute_start_ms, spans }
    }

    /// Lazily generate every minute of the scenario in order.
    pub fn batches(&self) -> Result<impl Iterator<Item = MinuteBatch> + '_> {
        self.validate()?;
        let faults = self.active_faults();
        Ok((0..self.minutes()).map(move |i| self.minute_with(i, &faults)))
    }

    /// Write one Zipkin JSON array per minute, newline-delimited.
    pub fn write_ndjson<W: Write>(&self, out: &mut W, instance_tag: &str) -> Result<u64> {
        let mut total = 0;
        for batch in self.batches()? {
            total += batch.spans.len() as u64;
            out.write_all(to_zipkin_json(&batch.spans, instance_tag).as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(total)
    }

    /// Names of the bundled scenarios accepted by [`ScenarioSpec::builtin`].
    pub const BUILTINS: [&'static str; 6] =
        ["demo", "rate-limit", "dead-service", "slow-db", "non-http", "low-traffic"];

    pub fn builtin(name: &str, seed: u64, duration_ms: u64) -> Result<Self> {
        match name {
            "demo" => Ok(Self::demo(seed, duration_ms)),
            "rate-limit" => Ok(Self::rate_limit(seed, duration_ms, 0.4)),
            "dead-service" => Ok(Self::dead_service(seed, duration_ms)),
            "slow-db" => Ok(Self::slow_db(seed, duration_ms, 2500.0)),
            "non-http" => Ok(Self::non_http(seed, duration_ms)),
            "low-traffic" => Ok(Self::low_traffic(seed, duration_ms)),
            other => Err(Error::InvalidScenario(format!(
                "unknown scenario `{other}`; expected one of {}",
                Self::BUILTINS.join(", ")
            ))),
        }
    }

    fn base(seed: u64, duration_ms: u64, dcs: &[&str], services: &[&str]) -> Self {
        let deployments = dcs
            .iter()
            .flat_map(|dc| {
                services.iter().map(|svc| Deployment { data_center: dc.to_string(), microservice: svc.to_string() })
            })
            .collect();
        ScenarioSpec {
            seed,
            start_ms: DEFAULT_START_MS,
            duration_ms,
            deployments,
            edges: Vec::new(),
            faults: Vec::new(),
        }
    }

    fn edge(mut self, caller: &str, callee: &str, rate: f64, median_ms: f64) -> Self {
        self.edges.push(Edge {
            caller: caller.into(),
            callee: callee.into(),
            rate_per_min: rate,
            latency: LatencyModel { median_ms, sigma: 0.5 },
            codes: BTreeMap::new(),
        });
        self
    }

    fn fault(mut self, fault: Fault) -> Self {
        self.faults.push(fault);
        self
    }

    /// One service rejecting a share of its calls with 429 in every data center.
    pub fn rate_limit(seed: u64, duration_ms: u64, share: f64) -> Self {
        Self::base(seed, duration_ms, &DEMO_DCS, &["frontend", "catalog", "svc-ratelimited"])
            .edge("frontend", "svc-ratelimited", 700.0, 40.0)
            .edge("catalog", "svc-ratelimited", 300.0, 40.0)
            .edge("frontend", "catalog", 50.0, 25.0)
            .fault(Fault::whole_run(FaultKind::RateLimit429, FaultTarget::callee("svc-ratelimited"), share))
    }

    /// One service failing every call with 500.
    pub fn dead_service(seed: u64, duration_ms: u64) -> Self {
        Self::base(seed, duration_ms, &DEMO_DCS, &["frontend", "catalog", "svc-dead"])
            .edge("frontend", "svc-dead", 20.0, 15.0)
            .edge("frontend", "catalog", 40.0, 25.0)
            .edge("catalog", "svc-dead", 5.0, 15.0)
            .fault(Fault::whole_run(FaultKind::ServerError5xx, FaultTarget::callee("svc-dead"), 1.0))
    }

    /// Database calls from one caller slowed to `median_ms`.
    pub fn slow_db(seed: u64, duration_ms: u64, median_ms: f64) -> Self {
        Self::base(seed, duration_ms, &DEMO_DCS, &["dashboard-broker", "preferences", "cloudant", "catalog"])
            .edge("dashboard-broker", "cloudant", 30.0, 60.0)
            .edge("preferences", "cloudant", 20.0, 60.0)
            .edge("dashboard-broker", "catalog", 30.0, 30.0)
            .edge("preferences", "catalog", 10.0, 30.0)
            .fault(Fault::whole_run(
                FaultKind::LatencyDegrade,
                FaultTarget::edge("dashboard-broker", "cloudant"),
                median_ms,
            ))
    }

    /// A custom-protocol edge reporting `-1` next to ordinary HTTP traffic.
    pub fn non_http(seed: u64, duration_ms: u64) -> Self {
        Self::base(seed, duration_ms, &DEMO_DCS, &["frontend", "notifications", "catalog"])
            .edge("frontend", "notifications", 30.0, 200.0)
            .edge("frontend", "catalog", 30.0, 25.0)
            .fault(Fault::whole_run(FaultKind::NonHttpCode, FaultTarget::edge("frontend", "notifications"), 0.5))
    }

    /// One service with a sliver of the usual traffic.
    pub fn low_traffic(seed: u64, duration_ms: u64) -> Self {
        Self::base(seed, duration_ms, &DEMO_DCS, &["frontend", "catalog", "usage-metering"])
            .edge("frontend", "catalog", 40.0, 25.0)
            .edge("frontend", "usage-metering", 40.0, 25.0)
            .fault(Fault::whole_run(FaultKind::LowTraffic, FaultTarget::callee("usage-metering"), 0.02))
    }

    /// Three data centers, twelve services and one instance of every fault kind.
    pub fn demo(seed: u64, duration_ms: u64) -> Self {
        let hour = 3_600_000u64;
        // keep fault windows inside short runs
        let window = |from_h: u64, len_h: u64| {
            let from = (from_h * hour).min(duration_ms / 4);
            let to = (from + len_h * hour).min(duration_ms);
            (Some(from), Some(to))
        };
        let mut spec = Self::base(seed, duration_ms, &DEMO_DCS, &DEMO_SERVICES);
        // reports is an old service only kept alive in one region
        spec.deployments.retain(|d| d.microservice != "legacy-reports" || d.data_center == "us-south");
        let mut spec = spec
            .edge("frontend", "iam", 12.0, 20.0)
            .edge("frontend", "dashboard-broker", 10.0, 80.0)
            .edge("frontend", "catalog", 8.0, 35.0)
            .edge("frontend", "resource-controller", 6.0, 60.0)
            .edge("frontend", "notifications", 3.0, 150.0)
            .edge("frontend", "legacy-reports", 0.5, 120.0)
            .edge("dashboard-broker", "cloudant", 6.0, 45.0)
            .edge("dashboard-broker", "datalayer", 8.0, 30.0)
            .edge("dashboard-broker", "usage-metering", 2.0, 40.0)
            .edge("preferences", "cloudant", 3.0, 45.0)
            .edge("frontend", "preferences", 4.0, 25.0)
            .edge("catalog", "datalayer", 5.0, 30.0)
            .edge("resource-controller", "iam", 5.0, 20.0)
            .edge("resource-controller", "billing", 2.0, 70.0)
            .edge("billing", "datalayer", 2.0, 30.0)
            .edge("datalayer", "cloudant", 6.0, 40.0);
        for e in &mut spec.edges {
            e.codes = [("200".to_string(), 0.97), ("404".to_string(), 0.02), ("503".to_string(), 0.01)].into();
        }
        let fault = |kind, target, magnitude, (from_ms, to_ms)| Fault { kind, target, magnitude, from_ms, to_ms };
        spec.faults = vec![
            fault(FaultKind::RateLimit429, FaultTarget::callee("resource-controller"), 0.4, window(6, 4)),
            fault(FaultKind::ServerError5xx, FaultTarget::callee("legacy-reports"), 1.0, (None, None)),
            fault(FaultKind::LatencyDegrade, FaultTarget::callee("cloudant"), 2500.0, window(14, 2)),
            fault(FaultKind::NonHttpCode, FaultTarget::edge("frontend", "notifications"), 0.3, (None, None)),
            fault(FaultKind::LowTraffic, FaultTarget::callee("usage-metering"), 0.05, (None, None)),
        ];
        spec
    }
}

pub const DEMO_DCS: [&str; 3] = ["eu-de", "jp-tok", "us-south"];
pub const DEMO_SERVICES: [&str; 12] = [
    "billing",
    "catalog",
    "cloudant",
    "dashboard-broker",
    "datalayer",
    "frontend",
    "iam",
    "legacy-reports",
    "notifications",
    "preferences",
    "resource-controller",
    "usage-metering",
];
