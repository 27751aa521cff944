use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("time {t} outside the admissible range [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("score target is singular at sigma = {sigma}")]
    Singular { sigma: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("non-finite gradient entry in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("block {block}: non-finite loss at update {update}")]
    NonFiniteLoss { block: usize, update: usize },

    #[error("integration blew up at step {step} (t = {t})")]
    Blowup { step: usize, t: f64 },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a numerical or
    /// environmental failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::Shape(_) | Error::Invalid { .. } | Error::Format { .. }
        )
    }
}
