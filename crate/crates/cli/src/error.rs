use std::fmt;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Environment = 2,
    Integrity = 3,
    Verification = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(exit: Exit, error: impl Into<anyhow::Error>) -> Self {
        CliError { exit, error: error.into() }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::new(Exit::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn env(error: impl Into<anyhow::Error>) -> Self {
        CliError::new(Exit::Environment, error)
    }

    pub fn integrity(error: impl Into<anyhow::Error>) -> Self {
        CliError::new(Exit::Integrity, error)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub(crate) trait Context<T> {
    fn or_exit(self, exit: Exit, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for Result<T, E> {
    fn or_exit(self, exit: Exit, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::new(exit, e.into().context(what.to_string())))
    }
}
