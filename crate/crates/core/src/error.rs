use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported point dimension {0} (only 2 and 3 are supported)")]
    UnsupportedDimension(usize),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate point cloud: all points coincide")]
    DegenerateCloud,

    #[error("point counts differ: source has {source_len}, target has {target_len}")]
    CountMismatch { source_len: usize, target_len: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("negative argument {name} = {value}")]
    NegativeArgument { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
