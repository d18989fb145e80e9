use thiserror::Error;

/// Errors raised by the model, data and evaluation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} outside [0, 1] for {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("CFL violation: rate {rate} at interface {interface} is not below 1/2")]
    Cfl { interface: usize, rate: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for CFL and non-finite-value failures.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Cfl { .. } | Error::Numerical(_) => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_data(&self) -> bool {
        match self {
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) => true,
            Error::AtStep { source, .. } => source.is_data(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
