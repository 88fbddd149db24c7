use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The model document does not match the schema; `path` names the offending entry.
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("topology violation: {0}")]
    Topology(String),

    /// A state entry left the finite range guarded by the integrator.
    #[error("simulation diverged: {coordinate} = {value}")]
    Diverged { coordinate: String, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("protocol misuse: {0}")]
    ProtocolMisuse(String),

    #[error("analysis insufficient: {0}")]
    AnalysisInsufficient(String),

    /// Error code reported by a remote grader.
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    /// A re-simulation disagrees with a stored trajectory.
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }

    /// Short machine-readable code, used in CLI output and wire errors.
    pub fn code(&self) -> &str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Topology(_) => "topology",
            Error::Diverged { .. } => "diverged",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ProtocolMisuse(_) => "protocol_misuse",
            Error::AnalysisInsufficient(_) => "analysis_insufficient",
            Error::Remote { code, .. } => code,
            Error::Parse(_) => "parse",
            Error::ReplayMismatch(_) => "replay_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
