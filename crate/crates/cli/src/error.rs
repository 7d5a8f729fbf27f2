use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<atcell::Error> for CliError {
    fn from(e: atcell::Error) -> Self {
        match e {
            atcell::Error::Solver(_) => CliError::Solver(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}
