use thiserror::Error;

/// Errors surfaced by graph construction, solvers and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph size overflow: {0}")]
    SizeOverflow(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("adjacency is not symmetric: {x} lists {y} but not vice versa")]
    NotUndirected { x: usize, y: usize },

    #[error("field length {got} does not match vertex count {expected}")]
    FieldLengthMismatch { expected: usize, got: usize },

    #[error("non-finite mass at vertex {vertex}")]
    NonFiniteMass { vertex: usize },

    #[error("total mass {total} is incompatible with vertex count {vertices} (tolerance {tol})")]
    MassMismatch {
        total: f64,
        vertices: usize,
        tol: f64,
    },

    #[error("solver failed: {0}")]
    SolveFailure(String),

    #[error("graph mismatch between operands")]
    GraphMismatch,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
