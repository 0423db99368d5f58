use thiserror::Error;

use crate::register::NuclearConfig;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("line at {frequency:.4} MHz is degenerate; matching configurations: {matches:?}")]
    Ambiguous {
        frequency: f64,
        matches: Vec<(NuclearConfig, i8)>,
    },

    #[error("no hyperfine line within tolerance of {0:.4} MHz")]
    NoSuchLine(f64),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("calibration failed: {message} (worst residual {worst_residual:.3e})")]
    Calibration { message: String, worst_residual: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("run error: {0}")]
    Run(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config syntax: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialization: {0}")]
    TomlSer(#[from] toml::ser::Error),
}
