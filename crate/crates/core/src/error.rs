use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FloodError {
    #[error("cell index ({i}, {j}) outside {nx}x{ny} grid")]
    Index {
        i: usize,
        j: usize,
        nx: usize,
        ny: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("numerical abort at t={time:.6} s: {msg}")]
    Numerical { time: f64, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl FloodError {
    pub fn config(msg: impl Into<String>) -> Self {
        FloodError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FloodError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that come from the integrator rather than from input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, FloodError::Numerical { .. })
    }
}

pub type Result<T, E = FloodError> = std::result::Result<T, E>;
