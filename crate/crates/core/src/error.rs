use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid sparsity: need 0 < k <= p, got k = {k}, p = {p}")]
    InvalidSparsity { k: usize, p: usize },

    #[error("contamination fraction {0} is outside [0, 1)")]
    InvalidFraction(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    NumericFailure { iteration: usize, what: String },

    #[error("calibration failed, last bracket [{lo}, {hi}]")]
    CalibrationFailure { lo: f64, hi: f64 },

    #[error("degenerate direction at t = {t}: projected norm {norm:e}")]
    DegenerateDirection { t: usize, norm: f64 },

    #[error("degenerate norm at t = {t}: squared norm {norm2:e}")]
    DegenerateNorm { t: usize, norm2: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("bad instance file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-friendly tag, used in CSV/JSON failure records and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::InvalidSparsity { .. } => "invalid-sparsity",
            Error::InvalidFraction(_) => "invalid-fraction",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::NumericFailure { .. } => "numeric-failure",
            Error::CalibrationFailure { .. } => "calibration-failure",
            Error::DegenerateDirection { .. } => "degenerate-direction",
            Error::DegenerateNorm { .. } => "degenerate-norm",
            Error::InvalidData(_) => "invalid-data",
            Error::Config { .. } => "config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

/// Checks that every entry is finite, reporting the first offender.
pub(crate) fn ensure_finite(v: &[f64], iteration: usize, what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NumericFailure {
            iteration,
            what: format!("{what}[{i}] = {}", v[i]),
        }),
    }
}
