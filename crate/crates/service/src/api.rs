//! HTTP interface.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cloudheat_core::{CodeFilter, Error, Metric, QuerySpec, ValueMode, View};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::ClockMode;
use crate::error::ServiceError;
use crate::pipeline::Pipeline;

pub type Params = BTreeMap<String, String>;

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    let ui_dir = pipeline.config().ui_dir.clone();
    let api = Router::new()
        .route("/api/v1/spans", post(post_spans))
        .route("/api/v1/tick", post(post_tick))
        .route("/api/v1/heatmap", get(get_heatmap))
        .route("/api/v1/catalog", get(get_catalog))
        .route("/api/v1/health", get(get_health))
        .with_state(pipeline);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, field) = match &self {
            ServiceError::BadParam { field, .. } => (StatusCode::BAD_REQUEST, Some(field.as_str())),
            ServiceError::Core(Error::InvalidSpec { field, .. }) => (StatusCode::BAD_REQUEST, Some(*field)),
            ServiceError::Core(Error::InvalidWindow { .. }) => (StatusCode::BAD_REQUEST, Some("window")),
            ServiceError::Core(Error::MisalignedPlan(_) | Error::MisalignedSnapshot { .. }) => {
                (StatusCode::BAD_REQUEST, Some("step"))
            }
            ServiceError::Core(Error::MalformedPayload(_)) => (StatusCode::BAD_REQUEST, None),
            ServiceError::Unavailable | ServiceError::Core(Error::StorageFailure(_)) => {
                (StatusCode::SERVICE_UNAVAILABLE, None)
            }
            ServiceError::WallClock => (StatusCode::CONFLICT, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        let body = match field {
            Some(f) => json!({ "error": self.to_string(), "field": f }),
            None => json!({ "error": self.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}

async fn post_spans(State(p): State<Arc<Pipeline>>, body: Bytes) -> Result<Response, ServiceError> {
    let summary = p.ingest(&body)?;
    Ok(Json(summary).into_response())
}

async fn post_tick(State(p): State<Arc<Pipeline>>, Query(params): Query<Params>) -> Result<Response, ServiceError> {
    if p.config().clock_mode != ClockMode::Manual {
        return Err(ServiceError::WallClock);
    }
    let now = match params.get("now") {
        Some(v) => parse_i64("now", v)?,
        None => return Err(ServiceError::param("now", "required")),
    };
    let sealed: Vec<i64> = p.seal_tick(now)?.iter().map(|s| s.interval_start).collect();
    Ok(Json(json!({ "sealed": sealed, "sealed_until": p.sealed_until() })).into_response())
}

async fn get_heatmap(State(p): State<Arc<Pipeline>>, Query(params): Query<Params>) -> Result<Response, ServiceError> {
    let spec = spec_from_params(&params, &p)?;
    Ok(Json(p.heatmap(&spec)?).into_response())
}

async fn get_catalog(State(p): State<Arc<Pipeline>>, Query(params): Query<Params>) -> Result<Response, ServiceError> {
    let (from, to) = window_from_params(&params, &p)?;
    Ok(Json(p.catalog(from, to)?).into_response())
}

async fn get_health(State(p): State<Arc<Pipeline>>) -> Json<serde_json::Value> {
    let range = p.stored_range();
    Json(json!({
        "storage_failing": p.storage_failing(),
        "interval_ms": p.interval_ms(),
        "clock": p.config().clock_mode.to_string(),
        "stored_from": range.map(|r| r.0),
        "stored_to": range.map(|r| r.1),
        "totals": p.totals(),
    }))
}

fn parse_i64(field: &str, v: &str) -> Result<i64, ServiceError> {
    v.trim().parse().map_err(|_| ServiceError::param(field, format!("`{v}` is not an integer")))
}

fn parse_f64(field: &str, v: &str) -> Result<f64, ServiceError> {
    match v.trim().parse::<f64>() {
        Ok(x) if !x.is_nan() => Ok(x),
        _ => Err(ServiceError::param(field, format!("`{v}` is not a number"))),
    }
}

fn parse_enum<T: std::str::FromStr<Err = String>>(field: &str, v: &str) -> Result<T, ServiceError> {
    v.parse().map_err(|e: String| ServiceError::param(field, e))
}

fn non_blank<'a>(params: &'a Params, key: &str) -> Option<&'a str> {
    params.get(key).map(|s| s.trim()).filter(|s| !s.is_empty())
}

/// `from`/`to` with the stored range as the default.
pub fn window_from_params(params: &Params, p: &Pipeline) -> Result<(i64, i64), ServiceError> {
    let (dfrom, dto) = p.stored_range().unwrap_or((0, p.interval_ms()));
    let from = non_blank(params, "from").map(|v| parse_i64("from", v)).transpose()?.unwrap_or(dfrom);
    let to = non_blank(params, "to").map(|v| parse_i64("to", v)).transpose()?.unwrap_or(dto);
    if from >= to {
        return Err(ServiceError::param("window", format!("from ({from}) must be before to ({to})")));
    }
    Ok((from, to))
}

/// Build a heatmap request from query parameters.
///
/// Defaults: view `datacenter_services`, metric `call_volume`, mode
/// `absolute`, no code filter, unbounded range, the stored window and the
/// base interval as step.
pub fn spec_from_params(params: &Params, p: &Pipeline) -> Result<QuerySpec, ServiceError> {
    let (from, to) = window_from_params(params, p)?;
    let view = non_blank(params, "view").map(|v| parse_enum::<View>("view", v)).transpose()?;
    let metric = non_blank(params, "metric").map(|v| parse_enum::<Metric>("metric", v)).transpose()?;
    let step = match non_blank(params, "step") {
        Some(v) => {
            v.parse::<u64>().map_err(|_| ServiceError::param("step", format!("`{v}` is not a positive integer")))?
        }
        None => p.config().base_interval_ms,
    };
    let mut spec =
        QuerySpec::new(view.unwrap_or(View::DatacenterServices), metric.unwrap_or(Metric::CallVolume), from, to, step);
    if let Some(v) = non_blank(params, "mode") {
        spec.value_mode = parse_enum::<ValueMode>("mode", v)?;
    }
    if let Some(v) = non_blank(params, "codes") {
        spec.code_filter = Some(CodeFilter::parse_list(v));
    }
    spec.lo = non_blank(params, "lo").map(|v| parse_f64("lo", v)).transpose()?;
    spec.hi = non_blank(params, "hi").map(|v| parse_f64("hi", v)).transpose()?;
    spec.validate()?;
    Ok(spec)
}
