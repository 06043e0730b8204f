use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `X'X` is numerically singular; carries its estimated condition number.
    #[error("degenerate design: X'X condition number {condition:.3e} exceeds 1e12")]
    DegenerateDesign { condition: f64 },

    #[error("degenerate propensity: {0}")]
    DegeneratePropensity(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("every unit was trimmed (trim = {trim})")]
    EmptySample { trim: f64 },

    #[error("truncation selection failed: {0}")]
    SelectionFailure(String),

    #[error("bootstrap unstable: {failed} of {total} replicates failed ({fraction:.1}%)", fraction = 100.0 * *.failed as f64 / *.total as f64)]
    BootstrapInstability { failed: usize, total: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("insufficient data: {valid} valid rows, need at least {required}")]
    InsufficientData { valid: usize, required: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
