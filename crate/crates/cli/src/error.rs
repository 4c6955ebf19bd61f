use treecrop_core::Error as CoreError;

/// Command failure with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Core(e) => match e {
                CoreError::InvalidThresholds(_) | CoreError::InvalidArgument(_) => 2,
                CoreError::Diverged(_) | CoreError::CollapsedCluster { .. } => 4,
                _ => 3,
            },
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
