use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("measure has a single atom; growth constant is undefined")]
    DegenerateMeasure,
    #[error("cube carries zero mass")]
    ZeroMassCube,
    #[error("no doubling cube found after scanning {scanned} sides")]
    NoDoublingCube { scanned: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown example kind `{0}`")]
    UnknownExample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
