use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no source samples fall in the bin centred at {center_nm} nm")]
    EmptyBin { center_nm: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("unknown LED `{0}`")]
    UnknownLed(String),

    #[error("illuminant too dark at {wavelengths_nm:?} nm")]
    DarkIlluminant { wavelengths_nm: Vec<f64> },

    #[error("region {index} lacks samples for LED(s) {missing:?}")]
    IncompleteRegion { index: usize, missing: Vec<String> },

    #[error("sensing matrix too large: {pixels} pixels exceeds the limit of {limit}")]
    TooLarge { pixels: usize, limit: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{count} output pixel(s) are not covered by any patch, first at {first:?}")]
    Uncovered { count: usize, first: Vec<(usize, usize)> },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error in {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
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

    /// Failures caused by ill-conditioned numerics rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_))
    }
}
