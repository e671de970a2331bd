use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Input { path: String, message: String },

    #[error(transparent)]
    Core(#[from] powerdensity::Error),

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("verification failed: {failed} check(s)")]
    VerificationFailed { failed: usize },
}

pub type RunResult<T> = Result<T, RunError>;

impl RunError {
    /// Process exit status: 1 usage or config, 2 numerical, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::VerificationFailed { .. } => 3,
            RunError::Reconstruction(_) => 2,
            RunError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| RunError::Io { context, source }
    }
}
