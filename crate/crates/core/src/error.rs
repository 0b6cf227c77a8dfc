use thiserror::Error;

/// Errors produced by the planning, simulation and training pipeline.
///
/// The variants map one-to-one onto the CLI exit codes: configuration
/// problems exit with 1, infeasible constraints with 2 and numerical
/// failures with 3.
#[derive(Debug, Error)]
pub enum SflError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SflError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SflError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SflError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SflError::Config { .. } | SflError::Io { .. } | SflError::Csv(_) => 1,
            SflError::Infeasible(_) => 2,
            SflError::Numerical(_) | SflError::Diverged { .. } => 3,
            SflError::Domain(_) | SflError::Protocol(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SflError>;
