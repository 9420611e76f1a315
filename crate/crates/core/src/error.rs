use thiserror::Error;

use crate::graph::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph violates standing assumptions: {0}")]
    InvalidGraph(ValidationReport),

    #[error("grid function does not belong to this mesh")]
    MeshMismatch,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("eigen solver failed: {0}")]
    Eigen(String),

    #[error("config error at line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error in `{field}`: {message}")]
    ConfigSemantic { field: String, message: String },

    #[error("result bundle is inconsistent: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidGraph(_)
            | Error::MeshMismatch
            | Error::ConfigSyntax { .. }
            | Error::ConfigSemantic { .. } => 2,
            Error::LinearSolve(_) | Error::Eigen(_) => 3,
            Error::Bundle(_) | Error::Io(_) => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn semantic(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigSemantic {
            field: field.into(),
            message: message.into(),
        }
    }
}
