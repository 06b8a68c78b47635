use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file truncated: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("bad magic or header size")]
    BadMagic,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensions: {0}")]
    UnsupportedDimensions(String),
    #[error("spacing must be finite and positive, got {0:?}")]
    NonPositiveSpacing([f64; 3]),
    #[error("volume contains non-finite values")]
    NonFiniteData,
    #[error("label value {0} outside 0..=9")]
    InvalidLabel(f64),
    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { len: usize, dims: [usize; 3] },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("window width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("unknown template case {0:?}")]
    UnknownTemplate(String),
    #[error("pool needs at least 2 cases, got {0}")]
    PoolTooSmall(usize),
    #[error("mask is empty")]
    EmptyMask,
    #[error("reference volume is empty")]
    EmptyReference,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution output size is not integral: {0}")]
    NonIntegralOutput(String),
    #[error("hidden size {dim} not divisible by {heads} heads")]
    IndivisibleHeads { dim: usize, heads: usize },
    #[error("extent {extent} not divisible by patch size {patch}")]
    NotDivisibleByPatch { extent: usize, patch: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("need at least 3 cases to split, got {0}")]
    TooFewCases(usize),
    #[error("phantom geometry leaves segment {0} empty")]
    DegenerateGeometry(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
