use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid context space: {0}")]
    InvalidSpace(String),

    #[error("corpus must contain at least one context")]
    EmptyCorpus,

    #[error("line {line}{}: {msg}", field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
    Parse {
        line: usize,
        field: Option<String>,
        msg: String,
    },

    #[error("context field `{field}` = {value} lies outside [{lo}, {hi}]")]
    OutOfSpace {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("controller `{0}` requires policy parameters")]
    MissingParams(&'static str),

    #[error("mismatched evaluation pairing: {0}")]
    Pairing(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
