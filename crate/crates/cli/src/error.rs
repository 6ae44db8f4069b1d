use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] dmfm_core::Error),
}

impl CliError {
    /// Stable machine-readable category printed before the message.
    pub fn category(&self) -> &'static str {
        use dmfm_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format(_) => "format",
            CliError::Model(e) => match e {
                E::Numerical { .. } | E::EmFailure { .. } | E::NotPositiveDefinite(_) | E::NotSymmetric => "numerical",
                E::Missing(_) => "missing-data",
                E::Shape(_) | E::InvalidArgument(_) | E::RankDeficient(_) => "model",
            },
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), detail: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
