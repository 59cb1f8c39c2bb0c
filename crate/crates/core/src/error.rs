use std::path::PathBuf;

use crate::krylov::SolveStats;

/// Errors produced by the synthesis pipeline, solvers and simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dense oracle refused: N = {n} exceeds cap {cap}")]
    OracleCap { n: usize, cap: usize },

    #[error("singular pivot at column {0} (assembly bug)")]
    SingularPivot(usize),

    #[error("jacobi oracle did not converge in {0} sweeps")]
    JacobiDiverged(usize),

    #[error("solver did not converge: {} iterations, relative residual {:.3e}", .0.iterations, .0.final_relative_residual)]
    NotConverged(SolveStats),

    #[error("position ({x}, {y}) outside field extent")]
    OutOfBounds { x: f64, y: f64 },

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
