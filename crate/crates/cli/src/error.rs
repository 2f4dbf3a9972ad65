use std::path::{Path, PathBuf};

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io { path: PathBuf, source: std::io::Error },
    Core(tgi_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 validation, 3 I/O, 4 insufficient statistics.
    pub fn exit_code(&self) -> i32 {
        use tgi_core::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::Io(_) | E::Csv(_) | E::Format(_) => 3,
                E::InsufficientStatistics(_) => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tgi_core::Error> for CliError {
    fn from(e: tgi_core::Error) -> Self {
        CliError::Core(e)
    }
}
