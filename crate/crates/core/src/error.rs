use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}` = {value}: expected {range}")]
    InvalidParam {
        field: &'static str,
        value: String,
        range: &'static str,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("indicator value {value} for class {class} is not usable as a margin input")]
    BadIndicator { class: usize, value: f64 },

    #[error("class {0} has no observed features; cannot synthesize")]
    UnseenClass(usize),

    #[error("box generator produced {0} consecutive degenerate boxes")]
    DegenerateBoxes(usize),

    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incompatible runs: {0}")]
    Incompatible(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParam { .. } => "invalid_param",
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidLabel(_) => "invalid_label",
            Error::BadIndicator { .. } => "bad_indicator",
            Error::UnseenClass(_) => "unseen_class",
            Error::DegenerateBoxes(_) => "degenerate_boxes",
            Error::InvalidBox { .. } => "invalid_box",
            Error::Config(_) => "config",
            Error::UnknownKey(_) => "unknown_key",
            Error::Checkpoint(_) => "checkpoint",
            Error::Incompatible(_) => "incompatible",
            Error::Diverged { .. } => "diverged",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
