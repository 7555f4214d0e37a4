use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("dual field has nonzero component {value} on boundary edge (axis {axis}, cell {cell})")]
    BoundaryComponent { axis: usize, cell: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("level {level} incompatible with shape {shape:?}")]
    Level { level: u32, shape: Vec<usize> },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, DecompError>;
