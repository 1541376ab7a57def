use thiserror::Error;

/// Errors raised by the toolkit. Each variant names the subsystem it came
/// from so that CLI diagnostics carry their provenance.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),

    #[error("permittivity: {0}")]
    Permittivity(String),

    #[error("assembly: {0}")]
    Assembly(String),

    #[error("eigensolver: {0}")]
    Eigensolver(String),

    #[error("classification: {0}")]
    Classification(String),

    #[error("spectral calculus: {0}")]
    Spectral(String),

    #[error("optimizer: {0}")]
    Optimizer(String),

    #[error("auchmuty: {0}")]
    Auchmuty(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user input rather than from a numerical
    /// failure. Drives the CLI exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Grid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
