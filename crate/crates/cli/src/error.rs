use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input file.
    #[error("{0}")]
    Invalid(String),
    /// A round or an A/B arm stopped early.
    #[error("{0}")]
    Aborted(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 3,
            CliError::Aborted(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}
