use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate 6D rotation: columns are parallel")]
    Degenerate6D,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("invalid skeleton topology: {0}")]
    InvalidTopology(String),
    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown joint order tag `{0}`")]
    UnknownJointOrder(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("sequence too short: {0}")]
    TooShort(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("prior model is not trained or does not support this operation")]
    ModelNotTrained,
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad handedness tag `{0}`")]
    BadHandedness(String),
    #[error("EM diverged: non-finite log-likelihood at iteration {0}")]
    EmDiverged(usize),
    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("rank deficient data: {0}")]
    RankDeficient(String),

    #[error("non-finite gradient in block {0}")]
    NonFiniteGradient(String),
    #[error("non-finite objective; offending term: {0}")]
    NonFiniteObjective(String),

    #[error("no frame has bounding-box confidence above the threshold")]
    NoConfidentFrames,
    #[error("empty augmented detection set")]
    EmptySet,
    #[error("degenerate point configuration for alignment")]
    DegenerateConfiguration,
    #[error("need at least {0} samples")]
    TooFew(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code for the error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Parse { .. } | Error::Schema(_) | Error::UnknownJointOrder(_) => 3,
            Error::Config(_) => 4,
            Error::InvalidTopology(_) => 5,
            Error::LengthMismatch(_) | Error::ShapeMismatch(_) | Error::TooShort(_) => 6,
            Error::ModelNotTrained | Error::Checkpoint(_) => 7,
            Error::NonFinite(_)
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteObjective(_)
            | Error::NonFiniteLoss(_)
            | Error::EmDiverged(_) => 8,
            Error::NoConfidentFrames | Error::EmptySet | Error::TooFew(_) => 9,
            Error::Degenerate6D
            | Error::BehindCamera(_)
            | Error::DegenerateConfiguration
            | Error::RankDeficient(_)
            | Error::BadHandedness(_) => 10,
        }
    }
}
