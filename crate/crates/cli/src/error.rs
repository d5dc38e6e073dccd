use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] forge_cl::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 I/O, 4 divergence, 5 verification.
    pub fn exit_code(&self) -> i32 {
        use forge_cl::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Verification(_) => 5,
            CliError::Core(e) => match e {
                E::Config(_) | E::Usage(_) | E::Shape { .. } => 2,
                E::Io { .. } | E::Data(_) | E::StateCorruption(_) => 3,
                E::Training { .. } | E::NonFiniteGradient { .. } => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
