use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("control out of bounds: {0}")]
    Bounds(String),

    #[error("integration diverged at t = {t:.3} s")]
    Divergence { t: f64 },

    #[error("insufficient history: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("input sequence too short: need {needed} steps, have {available}")]
    Length { needed: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("regressor matrix is rank deficient (column {column}); use a ridge parameter > 0")]
    Singular { column: usize },

    #[error("riccati iteration did not converge after {iterations} iterations (residual {residual:e}); (A, B_d) is likely not stabilizable")]
    Stabilizability { iterations: usize, residual: f64 },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("too many modes: {modes} exceeds the cap of {cap}")]
    ModeCount { modes: usize, cap: usize },

    #[error("no feasible shedding mode for this scenario")]
    InfeasibleScenario,

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::Singular { .. }
                | Error::Stabilizability { .. }
                | Error::Infeasible
                | Error::InfeasibleScenario
        )
    }
}
