use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("point outside the kernel domain: {0}")]
    Domain(String),

    #[error("kernel region not solved: {0}")]
    State(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("Picard iteration did not converge on slice {slice} (rows {lo}..={hi}): residual {residual:e}")]
    Convergence {
        slice: usize,
        lo: usize,
        hi: usize,
        residual: f64,
    },

    #[error("positivity violated at t = {t}: {what} = {value:e} (floor {floor:e})")]
    Positivity {
        t: f64,
        what: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("slice {slice}: min p11 = {min_p11} below the proven lower bound {bound}")]
    Bound { slice: usize, min_p11: f64, bound: f64 },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("simulation failed on path {path}, step {step}: {message}")]
    Simulation {
        path: usize,
        step: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::State(_) => "state",
            Error::Parse { .. } => "parse",
            Error::Convergence { .. } => "convergence",
            Error::Positivity { .. } => "positivity",
            Error::Bound { .. } => "bound",
            Error::Degenerate(_) => "degenerate",
            Error::Simulation { .. } => "simulation",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
