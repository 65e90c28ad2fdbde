use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<dagpost::Error> for CliError {
    fn from(e: dagpost::Error) -> Self {
        use dagpost::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::SizeLimit(_) => CliError::Config(msg),
            E::Numeric(_) | E::DegeneratePotential { .. } => CliError::Numeric(msg),
            E::Dimension(_)
            | E::Cycle { .. }
            | E::Contract(_)
            | E::Data(_)
            | E::Io(_)
            | E::Json(_) => CliError::Data(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
