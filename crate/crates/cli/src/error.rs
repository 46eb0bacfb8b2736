use std::path::PathBuf;

use isocaps_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}:{line}: {reason}")]
    ConfigFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing required option --{0}")]
    MissingOption(&'static str),

    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Core(CoreError::Io {
            path: path.into(),
            source,
        })
    }

    /// Process exit code; see the README for the table.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                CoreError::MalformedFile { .. }
                | CoreError::AsymmetricMatrix { .. }
                | CoreError::LabelOutOfRange { .. }
                | CoreError::InconsistentNodeCount { .. }
                | CoreError::EntryOutOfRange { .. } => 3,
                CoreError::Io { .. } => 4,
                CoreError::BadSpec(_)
                | CoreError::BadConfig(_)
                | CoreError::KTooLarge(_)
                | CoreError::GraphTooSmall { .. }
                | CoreError::BadGamma(_)
                | CoreError::BadIterations(_) => 5,
                CoreError::ModelFormat(_) => 6,
                CoreError::UnknownGraphId(_) => 7,
                CoreError::EmptyEvalSet | CoreError::EmptyBatch => 8,
                CoreError::ShapeMismatch(_)
                | CoreError::NotSymmetric(_)
                | CoreError::NoConvergence(_)
                | CoreError::StaleActivations { .. } => 9,
            },
            CliError::ConfigFile { .. } | CliError::MissingOption(_) => 5,
            CliError::ThreadPool(_) => 1,
        }
    }
}
