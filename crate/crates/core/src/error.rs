//! Error type shared across the search engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error on field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("rule syntax error at line {line}, column {column}: {message}")]
    RuleSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("rule `{rule}` failed to evaluate: {message}")]
    RuleEval { rule: String, message: String },

    #[error("unknown GPU type `{0}` (not in catalog)")]
    UnknownGpuType(String),

    #[error("invalid search request: {0}")]
    InvalidRequest(String),

    #[error("strategy {id} is unsupported: {reason}")]
    Unsupported { id: String, reason: String },

    #[error("in module {module} on {entity}: {source}")]
    Context {
        module: &'static str,
        entity: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the module and entity it came from, for surfacing
    /// through the CLI.
    pub fn in_module(self, module: &'static str, entity: impl Into<String>) -> Self {
        Error::Context {
            module,
            entity: entity.into(),
            source: Box::new(self),
        }
    }
}
