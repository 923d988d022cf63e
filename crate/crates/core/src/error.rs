use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("need at least 2 classes, got {got}")]
    TooFewClasses { got: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("pixel {pixel}: every class weight is below the normalization floor")]
    AllZeroColumn { pixel: usize },
    #[error("transport plan row {row} sums below the normalization floor")]
    ZeroRow { row: usize },
    #[error("transport plan column {column} sums below the normalization floor")]
    ZeroColumn { column: usize },
    #[error("iteration count must be at least 1")]
    ZeroIterations,

    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u64, classes: usize },
    #[error("payload truncated: expected {expected} samples, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("malformed palette text: {0}")]
    MalformedPalette(String),

    #[error("multiscale pyramid is empty")]
    EmptyPyramid,
    #[error("palette differs between pyramid levels")]
    PyramidPaletteMismatch,
    #[error("edited pixel set is empty")]
    EmptyEditSet,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("mixture component {component} collapsed (total responsibility {mass:e})")]
    DegenerateComponent { component: usize, mass: f64 },
    #[error("sampled vector was all-zero after clipping in {attempts} attempts")]
    DegenerateSample { attempts: usize },
    #[error("vector is all-zero after clipping to [0, 1]")]
    AllZeroAfterClip,
    #[error("invalid mixture model: {0}")]
    InvalidModel(String),
    #[error("candidate component list is empty")]
    NoCandidates,

    #[error("blend weight alpha={0} must lie in [0, 0.5)")]
    AlphaOutOfRange(f64),
    #[error("blur sigma={0} must be positive and finite")]
    InvalidSigma(f64),
    #[error("edit region {region} does not fit in a {height}x{width} layout")]
    RegionOutOfBounds {
        region: String,
        height: usize,
        width: usize,
    },
    #[error("background budget {got} does not match uncropped fraction {expected}")]
    BadBackgroundBudget { expected: f64, got: f64 },

    #[error("population is empty")]
    EmptyPopulation,
    #[error("layouts have mixed class counts ({first} vs {other})")]
    MixedClassCounts { first: usize, other: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
