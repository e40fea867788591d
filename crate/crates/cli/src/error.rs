use tbnn_core::Error;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Divergence = 4,
}

#[derive(Debug, thiserror::Error)]
#[error("{msg}")]
pub struct CliError {
    pub kind: ExitKind,
    pub msg: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, msg: msg.into() }
    }

    pub fn diverged(msg: impl Into<String>) -> Self {
        Self { kind: ExitKind::Divergence, msg: msg.into() }
    }

    pub fn config_from(e: Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Diverged(_) | Error::NonFinite { .. } => ExitKind::Divergence,
            Error::Contract(_) | Error::Unsupported(_) => ExitKind::Config,
            _ => ExitKind::Data,
        };
        Self { kind, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}
