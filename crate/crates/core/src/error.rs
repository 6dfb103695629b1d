use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("invalid design spec: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("outside catalog range: {0}")]
    OutOfRange(String),

    #[error("transient simulation did not settle within {cycles} cycles (residual {residual:.3e})")]
    Convergence { cycles: usize, residual: f64 },

    #[error("training-mode batch normalization needs at least two samples, got {0}")]
    BatchTooSmall(usize),

    #[error("training diverged at epoch {epoch} (non-finite loss); try a lower learning rate")]
    Divergence { epoch: usize },

    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.3e}")]
    GradientCheck { max_rel_error: f64, tolerance: f64 },

    #[error("model format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
