use thiserror::Error;

use crate::group::Elem;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group model mismatch: {0}")]
    ModelMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("element {elem:?} is outside the evaluation window ({context})")]
    OutOfWindow { elem: Elem, context: String },

    #[error("scale cap exceeded: {what} would hold more than {cap} elements")]
    ScaleCap { what: &'static str, cap: usize },

    #[error("value {value} at {elem:?} is not bounded by 1")]
    Unbounded { elem: Elem, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("no analytic decomposition for {0}")]
    NoAnalyticDecomposition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("hypotheses unconstructible at this horizon: {0}")]
    Unconstructible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, input: &str, reason: impl Into<String>) -> Self {
        Error::Parse {
            what,
            input: input.to_string(),
            reason: reason.into(),
        }
    }
}
