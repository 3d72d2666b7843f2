use thiserror::Error;

pub type Result<T> = std::result::Result<T, QamcError>;

#[derive(Debug, Error)]
pub enum QamcError {
    #[error("spin count {n} is outside the supported range {min}..={max} (every experiment enumerates all 2^n states)")]
    SpinCount { n: usize, min: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("integrator failure at t={t} (dt={dt}): non-finite amplitude")]
    Integrator { t: f64, dt: f64 },

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("detailed balance violated: symmetrized matrix asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    Reversibility { asymmetry: f64, tolerance: f64 },

    #[error("chain does not mix: spectral gap is zero")]
    NonMixing,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<QamcError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QamcError {
    pub fn context(self, context: impl Into<String>) -> Self {
        QamcError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Attach context to fallible results without a closure at every call site.
pub trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
    fn with_context<S: Into<String>>(self, f: impl FnOnce() -> S) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }

    fn with_context<S: Into<String>>(self, f: impl FnOnce() -> S) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
