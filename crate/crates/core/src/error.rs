use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quantity {value} outside family range [{lower}, {upper}]")]
    QuantityOutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("integration blew up at step {step}: non-finite state")]
    IntegrationBlowup { step: usize },

    #[error("curation failed: energy bin {bin} [{lo}, {hi}) unreachable after {attempts} attempts")]
    CurationFailure { bin: usize, lo: f64, hi: f64, attempts: u64 },

    #[error("orbit is not differentiable at step {step} (state {state})")]
    NonDifferentiableOrbit { step: usize, state: f64 },

    #[error("degenerate posterior: every reference weight underflowed to zero")]
    DegeneratePosterior,

    #[error("trajectory too short: need at least {needed} steps, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("incompatible bins: {0}")]
    IncompatibleBins(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("trajectory {id} is ragged: {message}")]
    RaggedTrajectory { id: String, message: String },

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("transport row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::ConfigParse(_)
                | Error::Domain(_)
                | Error::QuantityOutOfRange { .. }
                | Error::RaggedTrajectory { .. }
                | Error::NonFinite { .. }
                | Error::Malformed(_)
        )
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
