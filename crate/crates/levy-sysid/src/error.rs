//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or system parameter lies outside its admissible domain.
    #[error("parameter `{name}` out of domain: {reason}")]
    Domain { name: &'static str, reason: String },

    /// No sampler exists for the requested noise model.
    #[error("sampling is not supported for model kind `{0}`")]
    UnsupportedSampler(&'static str),

    /// A density-based quantity was requested for a model without a density.
    #[error("density is not available for model kind `{0}`")]
    DensityUnavailable(&'static str),

    /// A polynomial violates the stability margin.
    #[error("unstable polynomial `{which}`: root moduli {moduli:?} must stay below {limit}")]
    Unstable {
        which: &'static str,
        moduli: Vec<f64>,
        limit: f64,
    },

    /// Invalid configuration (dimensions, grid sizes, option values).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical operation failed (factorization, singular weights, guard bands).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Fewer replications succeeded than the report requires.
    #[error("insufficient successful replications: {succeeded}/{total}")]
    InsufficientReplications { succeeded: usize, total: usize },

    /// Error raised while running a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config/stability/domain, 3 insufficient
    /// replications, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Unstable { .. } | Error::Domain { .. } => 2,
            Error::InsufficientReplications { .. } => 3,
            Error::Io(_) => 4,
            Error::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
