use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid hardware spec: {0}")]
    InvalidHardware(String),

    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    #[error("invalid deployment plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),

    #[error("attention variant mismatch: expected {expected}, model `{model}` uses {found}")]
    VariantMismatch {
        expected: &'static str,
        found: &'static str,
        model: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
