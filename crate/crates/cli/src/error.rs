use held_core::Error as CoreError;
use held_he::HeError;
use held_protocol::ProtocolError;

/// Failures split by exit code: bad input is 1, anything that goes wrong
/// while running valid input is 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            // A missing or unreadable input file counts as bad input.
            CoreError::Numerical(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HeError> for CliError {
    fn from(e: HeError) -> Self {
        match e {
            HeError::Params(_) | HeError::Capacity { .. } | HeError::Overflow(_) | HeError::InvalidArgument(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::He(e) => e.into(),
            ProtocolError::Core(e) => e.into(),
            ProtocolError::InvalidArgument(_) | ProtocolError::Dim(_) | ProtocolError::StaleKeys(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
