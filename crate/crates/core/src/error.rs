use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("mesh file line {line}: {msg}")]
    MeshParse { line: usize, msg: String },
    #[error("point ({0}, {1}) lies outside the domain")]
    Outside(f64, f64),
    #[error("unsupported degree {0}")]
    Degree(usize),
    #[error("field layout mismatch: {0}")]
    Layout(String),
    #[error("cell {cell}: particle set is not unisolvent for the local space ({particles} particles, condition estimate {condition:.3e})")]
    Unisolvency {
        cell: usize,
        particles: usize,
        condition: f64,
    },
    #[error("cell {cell}: singular local block")]
    SingularLocal { cell: usize },
    #[error("global system singular near dof {dof}")]
    Singular { dof: usize },
    #[error("global solve residual {0:.3e} above tolerance")]
    Residual(f64),
    #[error("pressure is only determined up to a constant: gauge missing")]
    GaugeMissing,
    #[error("particle {0} has no valid host cell")]
    Lost(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
