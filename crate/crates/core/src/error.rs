//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape for the named operation.
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An index or size fell outside its documented bound.
    #[error("{what}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    /// More items requested than a fixed capacity allows.
    #[error("{what}: requested {requested}, capacity {max}")]
    Capacity {
        what: &'static str,
        requested: usize,
        max: usize,
    },

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric failure at runtime (NaN/Inf loss, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Annotation document errors (syntax and semantic validation).
    #[error(transparent)]
    Annotation(#[from] AnnotationError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised while parsing or validating annotation documents.
#[derive(Debug, Error)]
pub enum AnnotationError {
    /// Malformed JSON; positions are 1-based as reported by the parser.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("tracklet {instance_id} frame {frame}: box has x2 <= x1 or y2 <= y1")]
    BoxOrder { instance_id: u32, frame: usize },

    #[error("tracklet {instance_id} frame {frame}: coordinate {value} outside [0, {bound}]")]
    CoordOutOfRange {
        instance_id: u32,
        frame: usize,
        value: f64,
        bound: f64,
    },

    #[error("duplicate tracklet id {0}")]
    DuplicateId(u32),

    #[error("tracklet {instance_id}: {got} boxes for a {expected}-frame clip")]
    RaggedFrames {
        instance_id: u32,
        got: usize,
        expected: usize,
    },

    #[error("tracklet {instance_id}: no present frame")]
    NoPresentFrame { instance_id: u32 },

    #[error("invalid clip header: {0}")]
    Header(String),
}
