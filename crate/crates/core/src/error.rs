use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),

    #[error("span {span_id} starts at {start_ms} ms, outside bin [{bin_start}, {bin_end})")]
    OutOfBinSpan { span_id: String, start_ms: i64, bin_start: i64, bin_end: i64 },

    #[error("interval length must be positive")]
    InvalidInterval,

    #[error("misaligned resample plan: {0}")]
    MisalignedPlan(String),

    #[error("snapshot at {start} overlaps or precedes the previous snapshot")]
    OverlappingSnapshots { start: i64 },

    #[error("snapshot at {start} does not fit the plan: {reason}")]
    MisalignedSnapshot { start: i64, reason: String },

    #[error("invalid window [{from}, {to})")]
    InvalidWindow { from: i64, to: i64 },

    #[error("empty window")]
    EmptyWindow,

    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },

    #[error("append of snapshot at {start} is not after the last stored snapshot at {last}")]
    OutOfOrderAppend { start: i64, last: i64 },

    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),

    #[error("invalid query field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::SchemaViolation { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn spec(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidSpec { field, reason: reason.into() }
    }
}
