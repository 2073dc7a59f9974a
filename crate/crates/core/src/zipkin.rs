//! Zipkin v2 JSON span intake.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{normalize_return_code, or_placeholder, TraceSpan, PLACEHOLDER_RETURN_CODE};

/// Tag carrying the app instance (data center) when not configured otherwise.
pub const DEFAULT_INSTANCE_TAG: &str = "app.instance";
/// Standard Zipkin tag for the HTTP response status.
pub const STATUS_TAG: &str = "http.status_code";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Endpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_name: Option<String>,
}

/// Subset of the Zipkin v2 span model this crate reads and writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ZipkinSpan {
    pub trace_id: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub timestamp: u64,
    pub duration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_endpoint: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_endpoint: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl ZipkinSpan {
    /// Wire form of an internal span, tagging the instance under `instance_tag`.
    pub fn from_trace_span(span: &TraceSpan, instance_tag: &str) -> Self {
        let mut tags = BTreeMap::new();
        tags.insert(instance_tag.to_string(), span.app_instance_id.clone());
        if span.return_code != PLACEHOLDER_RETURN_CODE {
            tags.insert(STATUS_TAG.to_string(), span.return_code.clone());
        }
        ZipkinSpan {
            trace_id: span.trace_id.clone(),
            id: span.span_id.clone(),
            name: Some(span.callee_id.clone()),
            kind: Some("CLIENT".to_string()),
            timestamp: span.start_time_us.max(0) as u64,
            duration: span.duration_us,
            local_endpoint: Some(Endpoint { service_name: Some(span.caller_id.clone()) }),
            remote_endpoint: Some(Endpoint { service_name: Some(span.callee_id.clone()) }),
            tags,
        }
    }

    fn into_trace_span(self, instance_tag: &str) -> Option<TraceSpan> {
        let non_empty = |s: Option<String>| s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let caller = non_empty(self.local_endpoint.and_then(|e| e.service_name))?;
        let callee = non_empty(self.remote_endpoint.and_then(|e| e.service_name)).or_else(|| non_empty(self.name))?;
        let start = i64::try_from(self.timestamp).ok()?;
        let instance = or_placeholder(self.tags.get(instance_tag).map(String::as_str));
        let return_code = normalize_return_code(self.tags.get(STATUS_TAG).map(String::as_str));
        Some(TraceSpan {
            trace_id: self.trace_id,
            span_id: self.id,
            start_time_us: start,
            duration_us: self.duration,
            caller_id: caller,
            callee_id: callee,
            app_instance_id: instance,
            return_code,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedBatch {
    pub spans: Vec<TraceSpan>,
    /// Elements that could not be mapped onto a [`TraceSpan`].
    pub skipped: usize,
}

/// Parse a Zipkin v2 JSON array. Defective elements are skipped and counted;
/// only a non-array document fails the whole batch.
pub fn parse_zipkin_spans(payload: &[u8], instance_tag: &str) -> Result<ParsedBatch> {
    let doc: Value = serde_json::from_slice(payload).map_err(|e| Error::MalformedPayload(e.to_string()))?;
    let Value::Array(elements) = doc else {
        return Err(Error::MalformedPayload("top-level document is not a JSON array".into()));
    };
    let mut batch = ParsedBatch::default();
    for element in elements {
        match serde_json::from_value::<ZipkinSpan>(element).ok().and_then(|z| z.into_trace_span(instance_tag)) {
            Some(span) => batch.spans.push(span),
            None => batch.skipped += 1,
        }
    }
    Ok(batch)
}

/// Serialize spans as one Zipkin JSON array.
pub fn to_zipkin_json(spans: &[TraceSpan], instance_tag: &str) -> String {
    let wire: Vec<ZipkinSpan> = spans.iter().map(|s| ZipkinSpan::from_trace_span(s, instance_tag)).collect();
    serde_json::to_string(&wire).expect("zipkin spans serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE: &str = r#"[
      {"traceId":"5af7183fb1d4cf5f","id":"6b221d5bc9e6496c","name":"get /api","kind":"CLIENT",
       "timestamp":1700000000123456,"duration":2500,
       "localEndpoint":{"serviceName":"frontend"},"remoteEndpoint":{"serviceName":"catalog"},
       "tags":{"http.status_code":"200","app.instance":"us-south"}},
      {"traceId":"5af7183fb1d4cf5f","id":"7c331d5bc9e6496d","name":"post /pay",
       "timestamp":1700000000200000,"duration":0,
       "localEndpoint":{"serviceName":"catalog"},"remoteEndpoint":{"serviceName":"payments"},
       "tags":{"http.status_code":"429","app.instance":"eu-de"}},
      {"traceId":"aaaa","id":"bbbb","name":"cloudant",
       "timestamp":1700000000300000,"duration":2000000,
       "localEndpoint":{"serviceName":"dashboard-broker"},
       "tags":{"app.instance":"us-south"}}
    ]"#;

    #[test]
    fn maps_zipkin_fields() {
        let batch = parse_zipkin_spans(THREE.as_bytes(), DEFAULT_INSTANCE_TAG).unwrap();
        assert_eq!(batch.skipped, 0);
        assert_eq!(batch.spans.len(), 3);
        let a = &batch.spans[0];
        assert_eq!(a.trace_id, "5af7183fb1d4cf5f");
        assert_eq!(a.span_id, "6b221d5bc9e6496c");
        assert_eq!(a.start_time_us, 1_700_000_000_123_456);
        assert_eq!(a.duration_us, 2500);
        assert_eq!(a.caller_id, "frontend");
        assert_eq!(a.callee_id, "catalog");
        assert_eq!(a.app_instance_id, "us-south");
        assert_eq!(a.return_code, "200");
        assert_eq!(batch.spans[1].return_code, "429");
        assert_eq!(batch.spans[1].duration_us, 0);
        // no remote endpoint: callee from span name, no status: placeholder
        let c = &batch.spans[2];
        assert_eq!(c.callee_id, "cloudant");
        assert_eq!(c.return_code, "unknown");
    }

    #[test]
    fn empty_array() {
        let batch = parse_zipkin_spans(b"[]", DEFAULT_INSTANCE_TAG).unwrap();
        assert!(batch.spans.is_empty());
        assert_eq!(batch.skipped, 0);
    }

    #[test]
    fn missing_duration_is_skipped() {
        let payload = r#"[{"traceId":"t","id":"s","timestamp":1,
            "localEndpoint":{"serviceName":"a"},"remoteEndpoint":{"serviceName":"b"}}]"#;
        let batch = parse_zipkin_spans(payload.as_bytes(), DEFAULT_INSTANCE_TAG).unwrap();
        assert_eq!(batch.spans.len(), 0);
        assert_eq!(batch.skipped, 1);
    }

    #[test]
    fn callee_required() {
        let payload = r#"[{"traceId":"t","id":"s","timestamp":1,"duration":3,"name":"  ",
            "localEndpoint":{"serviceName":"a"}}]"#;
        let batch = parse_zipkin_spans(payload.as_bytes(), DEFAULT_INSTANCE_TAG).unwrap();
        assert_eq!(batch.skipped, 1);
    }

    #[test]
    fn custom_instance_tag() {
        let payload = r#"[{"traceId":"t","id":"s","timestamp":1,"duration":3,
            "localEndpoint":{"serviceName":"a"},"remoteEndpoint":{"serviceName":"b"},
            "tags":{"dc":"tok02","app.instance":"ignored"}}]"#;
        let batch = parse_zipkin_spans(payload.as_bytes(), "dc").unwrap();
        assert_eq!(batch.spans[0].app_instance_id, "tok02");
    }

    #[test]
    fn non_array_is_malformed() {
        for bad in [&b"{}"[..], b"not json", b"42"] {
            assert!(matches!(parse_zipkin_spans(bad, DEFAULT_INSTANCE_TAG), Err(Error::MalformedPayload(_))));
        }
    }

    fn label() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9-]{0,11}"
    }

    fn span() -> impl Strategy<Value = TraceSpan> {
        (
            "[0-9a-f]{16}",
            "[0-9a-f]{16}",
            0i64..4_000_000_000_000_000,
            0u64..10_000_000_000,
            label(),
            label(),
            label(),
            prop_oneof!["[1-5][0-9]{2}", Just("-1".to_string()), Just("unknown".to_string())],
        )
            .prop_map(|(t, s, start, dur, caller, callee, inst, code)| TraceSpan {
                trace_id: t,
                span_id: s,
                start_time_us: start,
                duration_us: dur,
                caller_id: caller,
                callee_id: callee,
                app_instance_id: inst,
                return_code: code,
            })
    }

    proptest! {
        #[test]
        fn zipkin_round_trip_is_lossless(spans in prop::collection::vec(span(), 0..20)) {
            let json = to_zipkin_json(&spans, DEFAULT_INSTANCE_TAG);
            let batch = parse_zipkin_spans(json.as_bytes(), DEFAULT_INSTANCE_TAG).unwrap();
            prop_assert_eq!(batch.skipped, 0);
            prop_assert_eq!(batch.spans, spans);
        }

        #[test]
        fn parsed_plus_skipped_is_input_len(
            good in prop::collection::vec(span(), 0..10),
            bad in 0usize..10,
        ) {
            let mut elements: Vec<Value> = good
                .iter()
                .map(|s| serde_json::to_value(ZipkinSpan::from_trace_span(s, DEFAULT_INSTANCE_TAG)).unwrap())
                .collect();
            for i in 0..bad {
                elements.push(serde_json::json!({"id": i, "duration": "x"}));
            }
            let payload = serde_json::to_vec(&elements).unwrap();
            let batch = parse_zipkin_spans(&payload, DEFAULT_INSTANCE_TAG).unwrap();
            prop_assert_eq!(batch.spans.len() + batch.skipped, good.len() + bad);
            prop_assert_eq!(batch.skipped, bad);
        }
    }
}
