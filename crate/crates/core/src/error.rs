use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("profile evaluated at x = {x} outside its table range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("mesh construction failed in column {column}: {reason}")]
    Mesh { column: usize, reason: String },

    #[error("factorization breakdown at row {row}: pivot {pivot:e} (diag {diag:e}, |d| range [{min_pivot:e}, {max_pivot:e}])")]
    Factorization {
        row: usize,
        pivot: f64,
        diag: f64,
        min_pivot: f64,
        max_pivot: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("nonlinearity rejected: {0}")]
    Nonlinearity(String),

    #[error("norm {kind} is not defined on this space")]
    NormMismatch { kind: String },

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("rate fit needs at least 3 usable points, got {0}")]
    TooFewPoints(usize),

    #[error("trajectory blew up at t = {t}: max |u| = {max:e}")]
    BlowUp { t: f64, max: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
