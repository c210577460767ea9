use thiserror::Error;

use crate::rng::StreamId;

/// Errors produced anywhere in the filtering pipeline.
#[derive(Debug, Error)]
pub enum MlpfError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid level grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every particle on one side of the ensemble received zero (or non-finite) weight.
    #[error("weight collapse on {side} side at observation {observation}")]
    WeightCollapse {
        observation: usize,
        side: &'static str,
    },

    /// A propagated state became NaN or infinite.
    #[error("non-finite state at observation {observation} (Euler step size exceeds the stability bound?)")]
    NonFinite { observation: usize },

    #[error("no level satisfies the bias constraint for epsilon = {epsilon}; measure more levels")]
    Infeasible { epsilon: f64 },

    #[error("random stream identifier reused: {0:?}")]
    StreamReuse(StreamId),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MlpfError {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            MlpfError::InvalidModel(_) => "invalid_model",
            MlpfError::InvalidGrid(_) => "invalid_grid",
            MlpfError::InvalidInput(_) => "invalid_input",
            MlpfError::WeightCollapse { .. } => "weight_collapse",
            MlpfError::NonFinite { .. } => "non_finite",
            MlpfError::Infeasible { .. } => "infeasible",
            MlpfError::StreamReuse(_) => "stream_reuse",
            MlpfError::Config { .. } => "config",
            MlpfError::Io(_) => "io",
            MlpfError::Csv(_) => "csv",
            MlpfError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, MlpfError>;
