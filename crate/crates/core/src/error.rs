use thiserror::Error;

use crate::quadrature::QuadratureError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {points} points but {marks} marks")]
    MarkLengthMismatch { points: usize, marks: usize },
    #[error("numerical integration failed in {context}: {source}")]
    Quadrature {
        context: &'static str,
        #[source]
        source: QuadratureError,
    },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub(crate) fn quad(context: &'static str) -> impl FnOnce(QuadratureError) -> Error {
        move |source| Error::Quadrature { context, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
