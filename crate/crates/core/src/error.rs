use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("point {point} lies outside lattice {lattice} (local coords {coords:?})")]
    OutOfLattice {
        point: usize,
        lattice: usize,
        coords: [f64; 3],
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible design space: {accepted} accepted out of the last {window} draws")]
    InfeasibleSpace { accepted: usize, window: usize },

    #[error("rank deficiency: requested K={requested} but effective rank is {effective_rank}")]
    RankDeficient {
        requested: usize,
        effective_rank: usize,
    },

    #[error("ill-posed latent dimension K={k}: lambda_K={lambda_k:e} <= sigma^2={sigma2:e}")]
    IllPosedK { k: usize, lambda_k: f64, sigma2: f64 },

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("budget {budget} below optimizer minimum {minimum}")]
    Budget { budget: usize, minimum: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stale artifact {path}: expected hash {expected}, found {found}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed record {line} in {path}: {reason}")]
    MalformedLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("output directory is locked by {0}")]
    Locked(PathBuf),

    #[error("bad container format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InfeasibleSpace { .. } => 3,
            Error::RankDeficient { .. } | Error::IllPosedK { .. } => 4,
            Error::Budget { .. } => 5,
            Error::MalformedLog { .. } => 6,
            _ => 1,
        }
    }

    /// Short machine-readable category used as the error line prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidLattice(_) | Error::OutOfLattice { .. } => "lattice",
            Error::Domain(_) | Error::DimensionMismatch { .. } => "domain",
            Error::InfeasibleSpace { .. } => "infeasible",
            Error::RankDeficient { .. } | Error::IllPosedK { .. } => "rank",
            Error::Numerical { .. } => "numerical",
            Error::InsufficientData { .. } => "data",
            Error::Budget { .. } => "budget",
            Error::Config(_) => "config",
            Error::StaleArtifact { .. } => "stale",
            Error::MalformedLog { .. } => "malformed_log",
            Error::Locked(_) => "locked",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
