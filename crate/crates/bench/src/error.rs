use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] whitebench_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid cell selector {0:?}")]
    Selector(String),
    #[error("{cell}: target accuracy {target} unreachable even at alpha = 1 (test accuracy {accuracy:.4})")]
    Unreachable { cell: String, target: f64, accuracy: f64 },
    #[error("upstream stage failed: {0}")]
    Upstream(String),
    #[error("no metrics files found under {0}")]
    NoMetrics(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;
