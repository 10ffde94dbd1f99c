use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solve did not converge (relative residual {residual:.3e})")]
    NumericalFailure { residual: f64 },

    #[error(
        "refinement did not converge at {elements_per_strip} elements/strip \
         (last energies {previous:.9e} -> {last:.9e} J/m)"
    )]
    Convergence {
        elements_per_strip: usize,
        previous: f64,
        last: f64,
    },

    #[error("degenerate fit: {reason} (condition number {condition_number:.3e})")]
    DegenerateFit {
        reason: String,
        condition_number: f64,
    },

    #[error("exponential fit failed: {reason} ({} iterations)", .cost_trace.len())]
    FitFailure {
        reason: String,
        /// Sum of squared residuals after each accepted iteration.
        cost_trace: Vec<f64>,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error at row {row}: field `{field}`: {message}")]
    Validation {
        row: usize,
        field: &'static str,
        message: String,
    },

    #[error("{stage}: {source}")]
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
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wrap with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
