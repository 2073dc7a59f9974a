use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] cloudheat_core::Error),

    #[error("invalid parameter `{field}`: {reason}")]
    BadParam { field: String, reason: String },

    #[error("storage is failing; intake paused until the next successful seal")]
    Unavailable,

    #[error("tick requires the manual clock")]
    WallClock,

    #[error("data directory is not usable: {0}")]
    DataDir(std::io::Error),
}

impl ServiceError {
    pub fn param(field: &str, reason: impl Into<String>) -> Self {
        ServiceError::BadParam { field: field.to_string(), reason: reason.into() }
    }
}
