use std::fmt;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable input, or an invalid parameter combination.
    Input(String),
    /// The optimiser diverged or produced non-finite values.
    Optimisation(String),
    /// A solution does not belong to the supplied dataset.
    Provenance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Optimisation(_) => 2,
            CliError::Provenance(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Optimisation(m) => write!(f, "optimisation failed: {m}"),
            CliError::Provenance(m) => write!(f, "provenance check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<slisemap::Error> for CliError {
    fn from(e: slisemap::Error) -> Self {
        if e.is_optimisation() {
            CliError::Optimisation(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
