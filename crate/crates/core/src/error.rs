use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("artifact schema mismatch: {0}")]
    Schema(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("measurement plan incompatible with network: {0}")]
    IncompatiblePlan(String),

    #[error("invalid distribution spec: {0}")]
    InvalidDistribution(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {max_mismatch:.3e} MVA)")]
    PowerFlowDiverged {
        iterations: usize,
        max_mismatch: f64,
    },

    #[error("system unobservable: gain matrix has rank {rank} < {required}")]
    Unobservable { rank: usize, required: usize },

    #[error("state estimation did not converge after {iterations} iterations (last step {step_norm:.3e})")]
    EstimationDiverged { iterations: usize, step_norm: f64 },

    #[error("skew-normal mode solve failed for alpha = {alpha}")]
    ModeSolve { alpha: f64 },

    #[error(
        "quadrature did not reach tolerance: estimate {estimate:.12e}, error bound {error:.3e}"
    )]
    Quadrature { estimate: f64, error: f64 },

    #[error("scenario generation gave up after {attempts} attempts ({converged} of {requested} converged)")]
    ScenarioBudget {
        attempts: usize,
        converged: usize,
        requested: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            source,
        }
    }
}
