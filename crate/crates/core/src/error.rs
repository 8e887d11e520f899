use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("{what} {index} out of range (limit {limit})")]
    Range {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("non-finite gradient in {0}")]
    Numeric(String),

    #[error("frame too large: {rows}x{cols} elements do not fit the wire format")]
    Size { rows: usize, cols: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("channel closed by peer")]
    ChannelClosed,

    #[error("logic error: {0}")]
    Logic(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
