use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters, grids or pulse definitions.
    #[error("configuration error: {0}")]
    Config(String),

    /// A physical input outside the domain of a formula or correlation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values appeared while integrating the field equations.
    #[error("numerical instability at step {step} (z index {z_index}, class {class_index}): {detail}")]
    Numerical {
        step: usize,
        z_index: usize,
        class_index: usize,
        detail: String,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("synthesis error: {0}")]
    Synthesis(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("extraction error: {0}")]
    Extraction(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Prefixes the message with `context`, keeping the variant.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        let wrap = |m: String| format!("{context}: {m}");
        match self {
            Error::Config(m) => Error::Config(wrap(m)),
            Error::Domain(m) => Error::Domain(wrap(m)),
            Error::Numerical {
                step,
                z_index,
                class_index,
                detail,
            } => Error::Numerical {
                step,
                z_index,
                class_index,
                detail: wrap(detail),
            },
            Error::Calibration(m) => Error::Calibration(wrap(m)),
            Error::Synthesis(m) => Error::Synthesis(wrap(m)),
            Error::Fit(m) => Error::Fit(wrap(m)),
            Error::Range(m) => Error::Range(wrap(m)),
            Error::Extraction(m) => Error::Extraction(wrap(m)),
            Error::Optimization(m) => Error::Optimization(wrap(m)),
            Error::Format(m) => Error::Format(wrap(m)),
        }
    }

    /// Coarse error family used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Format(_) => ErrorKind::Config,
            Error::Numerical { .. } | Error::Calibration(_) | Error::Optimization(_) => {
                ErrorKind::Numerical
            }
            Error::Synthesis(_) | Error::Fit(_) | Error::Range(_) | Error::Extraction(_) => {
                ErrorKind::Analysis
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Analysis,
}
