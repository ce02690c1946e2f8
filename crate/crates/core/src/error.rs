use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelRange { label: i64, num_classes: usize },

    #[error("input too short: length {got}, encoder needs at least {min}")]
    InputLength { min: usize, got: usize },

    #[error("parse error at {}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    /// Training produced a non-finite loss or gradient.
    #[error("divergence in {component}{context}")]
    Divergence { component: String, context: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attach epoch/batch context to a divergence error; other errors pass through.
    pub(crate) fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Divergence { component, context } => Error::Divergence {
                component,
                context: format!("{context} ({ctx})"),
            },
            other => other,
        }
    }

    /// Coarse category used to map failures onto process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Divergence { .. } => ErrorCategory::Divergence,
            Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Divergence,
    Io,
    Other,
}
