use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable image {path}: {source}")]
    UnreadableImage {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no camera entry for image {0}")]
    MissingCameraEntry(String),

    #[error("dimension mismatch for {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: u32, reason: String },

    #[error("invalid image data: {0}")]
    InvalidImage(String),

    #[error("parse error in {file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("unsupported camera model {0}")]
    UnsupportedCameraModel(String),

    #[error("cannot initialise a cloud from an empty point set")]
    EmptyPointSet,

    #[error("cloud file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },

    #[error("corrupt cloud header: {0}")]
    CorruptHeader(String),

    #[error("weight map is zero everywhere; loss is undefined")]
    ZeroWeights,

    #[error("non-finite gradient for splat {splat}")]
    NonFiniteGradient { splat: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("timestep {t} outside [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("requested {requested} adjacent views but only {available} are available")]
    TooManyAdjacentViews { requested: usize, available: usize },

    #[error("nonpositive depth {0}")]
    NonPositiveDepth(f64),

    #[error("mask has no positive pixel")]
    EmptyMask,

    #[error("view count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("too few views: {found} (need at least {needed})")]
    TooFewViews { found: usize, needed: usize },

    #[error("latent shape mismatch: expected {expected:?}, found {found:?}")]
    LatentShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("network error talking to inpainting backend: {0}")]
    Network(String),

    #[error("inpainting backend protocol error (status {status}): {body}")]
    Protocol { status: u16, body: String },

    #[error("inpainting backend violated its contract: {0}")]
    ContractViolation(String),

    #[error("inpainting failed in cycle {cycle}: {source}")]
    InpaintCycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
