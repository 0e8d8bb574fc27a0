use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] hac_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// 2 for numeric divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hac_core::Error::Numeric { .. }) => 2,
            _ => 1,
        }
    }
}
