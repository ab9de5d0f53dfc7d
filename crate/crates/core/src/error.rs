use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate lift: columns {columns:?} are linearly dependent")]
    DegenerateLift { columns: Vec<usize> },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("observer step too large for mode {mode}: dt_eff must be below {max_dt:.6e}")]
    StepTooLarge { mode: usize, max_dt: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
