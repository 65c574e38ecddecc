use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Every variant renders as `<kind>: <detail>` on a single line so that the
/// CLI can print it verbatim and callers can split on the first colon.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-range: {0}")]
    InvalidRange(String),
    #[error("invalid-intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid-pose: {0}")]
    InvalidPose(String),
    #[error("behind-camera: point depth {0} is not positive")]
    BehindCamera(f64),
    #[error("dimension-mismatch: {0}")]
    DimensionMismatch(String),
    #[error("out-of-range: {0}")]
    OutOfRange(String),
    #[error("non-finite-cost: pixel ({x}, {y})")]
    NonFiniteCost { x: usize, y: usize },
    #[error("missing-file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("empty-association: no rgb frame matched a pose within {0} s")]
    EmptyAssociation(f64),
    #[error("parse-error: {}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("bad-magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("size-mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite-values: {0}")]
    NonFiniteValues(String),
    #[error("unnormalized-ray: pixel {pixel} sums to {sum}")]
    UnnormalizedRay { pixel: usize, sum: f64 },
    #[error("invalid-normal: pixel {pixel} has norm {norm}")]
    InvalidNormal { pixel: usize, norm: f64 },
    #[error("empty-valid-set: no pixel has valid ground truth")]
    EmptyValidSet,
    #[error("config-error: {0}")]
    Config(String),
    #[error("io-failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("image-error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable machine-readable kind, the text before the first colon.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidRange(_) => "invalid-range",
            Error::InvalidIntrinsics(_) => "invalid-intrinsics",
            Error::InvalidPose(_) => "invalid-pose",
            Error::BehindCamera(_) => "behind-camera",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::OutOfRange(_) => "out-of-range",
            Error::NonFiniteCost { .. } => "non-finite-cost",
            Error::MissingFile(_) => "missing-file",
            Error::EmptyAssociation(_) => "empty-association",
            Error::Parse { .. } => "parse-error",
            Error::BadMagic { .. } => "bad-magic",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::NonFiniteValues(_) => "non-finite-values",
            Error::UnnormalizedRay { .. } => "unnormalized-ray",
            Error::InvalidNormal { .. } => "invalid-normal",
            Error::EmptyValidSet => "empty-valid-set",
            Error::Config(_) => "config-error",
            Error::Io(_) => "io-failure",
            Error::Image(_) => "image-error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dims(
    what: &str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {}x{}, found {}x{}",
            expected.0, expected.1, found.0, found.1
        )));
    }
    Ok(())
}
