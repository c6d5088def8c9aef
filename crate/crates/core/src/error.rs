use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing-value run of {len} steps at index {start} exceeds cap of {cap}")]
    GapTooLong { start: usize, len: usize, cap: usize },

    #[error("series has missing values at its {0} boundary")]
    MissingBoundary(&'static str),

    #[error("channel `{0}` is degenerate (max == min)")]
    DegenerateChannel(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("model is not fitted")]
    Unfitted,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("episode is incomplete: {steps} of {expected} steps")]
    IncompleteEpisode { steps: usize, expected: usize },

    #[error("environment episode already finished; call reset")]
    EpisodeDone,

    #[error("experience pool is empty but a replacement was requested")]
    EmptyPool,

    #[error("too many features for exact enumeration: {0} (max 12)")]
    TooManyFeatures(usize),

    #[error("horizon {0} too large for exhaustive search (max 4)")]
    HorizonTooLarge(usize),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the command line for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::GapTooLong { .. } => "gap-too-long",
            Error::MissingBoundary(_) => "missing-boundary",
            Error::DegenerateChannel(_) => "degenerate-channel",
            Error::Shape { .. } => "shape",
            Error::Unfitted => "unfitted",
            Error::Divergence { .. } => "divergence",
            Error::IncompleteEpisode { .. } => "incomplete-episode",
            Error::EpisodeDone => "episode-done",
            Error::EmptyPool => "empty-pool",
            Error::TooManyFeatures(_) => "too-many-features",
            Error::HorizonTooLarge(_) => "horizon-too-large",
            Error::Config(_) => "config",
            Error::Serde(_) => "serde",
        }
    }

    /// True when the failure is caused by user input rather than a bug or
    /// numerical breakdown.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Divergence { .. } | Error::Serde(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
