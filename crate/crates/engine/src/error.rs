use thiserror::Error;

use crate::event::{QueryId, RowKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("query {query} does not consume {row} rows")]
    TypeMismatch { query: QueryId, row: RowKind },
    #[error("fixed-point overflow in {0}")]
    Overflow(&'static str),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
}
