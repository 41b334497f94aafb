use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crash-synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("validation error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<u64>, msg: String },

    #[error("{0} absent")]
    MissingSignal(&'static str),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient sample: {0}")]
    InsufficientData(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("weak-correlation guard unsatisfiable for every eta")]
    PairingGuard,

    #[error("uncategorizable row (v_f_init={v_f}, v_l_init={v_l})")]
    Uncategorizable { v_f: f64, v_l: f64 },

    #[error("missing input {path}; run stage `{stage}` first")]
    MissingInput { path: PathBuf, stage: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            kind => Error::Parse {
                path: path.into(),
                line,
                msg: format!("{kind:?}"),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
