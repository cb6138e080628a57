//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // volume I/O
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("bad NIfTI magic {found:?} in {path} (expected \"n+1\\0\")")]
    BadMagic { path: String, found: String },
    #[error("unsupported NIfTI datatype code {code} in {path} (supported: 2, 4, 16)")]
    UnsupportedDatatype { path: String, code: i16 },
    #[error("truncated data in {path}: expected {expected} bytes after offset, found {found}")]
    TruncatedData {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid NIfTI header in {path}: {reason}")]
    BadHeader { path: String, reason: String },

    // morphology
    #[error("volume is constant ({0} distinct values); cannot threshold")]
    ConstantVolume(usize),
    #[error("thresholding produced an empty foreground")]
    NoForeground,
    #[error("negative structuring radius: {0} mm")]
    NegativeRadius(f64),
    #[error("head mask is empty")]
    EmptyHeadMask,

    // hough
    #[error("volume too small for gradients: dims {0:?} (need >= 3 per axis)")]
    VolumeTooSmall((usize, usize, usize)),
    #[error("VOI mask contains no voxels")]
    EmptyVoi,
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    // template / registration
    #[error("duplicate label {0:?} in template")]
    DuplicateLabel(String),
    #[error("non-unit template vector for {label:?}: |v| = {norm}")]
    NonUnitVector { label: String, norm: f64 },
    #[error("missing fiducial {0:?}")]
    MissingFiducial(String),
    #[error("too few points for fit: {found} (need >= {need})")]
    TooFewPoints { found: usize, need: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("too few candidates for ICP: {found} (need >= {need})")]
    TooFewCandidates { found: usize, need: usize },
    #[error("malformed template file {path}: {reason}")]
    BadTemplate { path: String, reason: String },

    // evaluation
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("zero variance: all paired differences are identical")]
    ZeroVariance,
    #[error("empty input: {0}")]
    EmptyInput(String),

    // phantom
    #[error("electrodes {a:?} and {b:?} overlap: centers {dist:.2} mm apart (< {min:.2} mm)")]
    ElectrodeOverlap {
        a: String,
        b: String,
        dist: f64,
        min: f64,
    },

    // pancake
    #[error("point {0:?} coincides with the projection center")]
    DegeneratePoint(String),

    // pipeline stage context
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input file {path}: {reason}")]
    BadInput { path: String, reason: String },
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for filesystem-level failures (CLI exit code 2); everything
    /// else is a validation error (exit code 1).
    pub fn is_io(&self) -> bool {
        match self {
            Error::MissingFile(_) | Error::IoFailure { .. } => true,
            Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
