//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by the mesh, assembly, solver, and I/O layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("unsupported source: {0}")]
    UnsupportedSource(String),

    #[error("incompatible domain: {0}")]
    IncompatibleDomain(String),

    #[error("incompatible meshes: {0}")]
    IncompatibleMesh(String),

    #[error("singular direction system: frozen factor is numerically zero after reinitialization")]
    SingularDirection,

    #[error("non-finite gradient at iteration {iteration}: {detail}")]
    NonFiniteGradient { iteration: usize, detail: String },

    #[error("degenerate element at ({i}, {j}): det J = {det}")]
    DegenerateElement { i: usize, j: usize, det: f64 },

    #[error("point ({x}, {y}) outside reference domain")]
    PointOutsideReference { x: f64, y: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
