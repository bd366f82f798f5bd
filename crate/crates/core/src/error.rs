use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulation pipeline.
///
/// Every variant carries the name of the module that raised it so that
/// failures surfacing at the command line can be traced back.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: configuration error: {msg}")]
    Config { module: &'static str, msg: String },

    #[error("{module}: {off_grid_mass:.3e} of the Gaussian mass lies outside the grid (threshold {threshold:.1e})")]
    Truncation {
        module: &'static str,
        off_grid_mass: f64,
        threshold: f64,
    },

    #[error("{module}: numerical error: {msg}")]
    Numerical { module: &'static str, msg: String },

    #[error("{module}: non-physical covariance matrix, minimum symplectic eigenvalue {min_symplectic:.12} < 1/2")]
    Physicality {
        module: &'static str,
        min_symplectic: f64,
    },

    #[error("{module}: contract violation: {msg}")]
    Contract { module: &'static str, msg: String },

    #[error("{module}: state error: {msg}")]
    State { module: &'static str, msg: String },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn numerical(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn state(module: &'static str, msg: impl Into<String>) -> Self {
        Error::State {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 configuration, 2 numerical or
    /// physicality, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Truncation { .. } => 1,
            Error::Numerical { .. }
            | Error::Physicality { .. }
            | Error::Contract { .. }
            | Error::State { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}
