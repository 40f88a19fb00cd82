use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("graph is disconnected: vertex {vertex} is not reachable from vertex 0")]
    Disconnected { vertex: usize },

    #[error("invalid ambient space: {0}")]
    InvalidAmbient(String),

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(
        "Hölder constant {h} too small: sample points {a} and {b} have quotient {quotient}"
    )]
    HolderViolation {
        a: usize,
        b: usize,
        quotient: f64,
        h: f64,
    },

    #[error("negative jump rate {rate} on edge {from} -> {to}; markovize the generator first")]
    NegativeRate { from: usize, to: usize, rate: f64 },

    #[error(
        "eigenvalue {index} is degenerate (gap {gap:.3e}); pick a simple index or use the interval family"
    )]
    DegenerateEigenvalue { index: usize, gap: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
