use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite objective at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("batch is missing the {0} modality; use the unimodal inference paths")]
    MissingModality(&'static str),

    #[error("batches are misaligned: {0} vs {1} samples")]
    Misaligned(usize, usize),

    #[error("identity {0} out of range 0..=9")]
    IdentityOutOfRange(i64),

    #[error("no samples of identity {identity} in the {modality} pool")]
    MissingIdentity {
        identity: u8,
        modality: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad IDX magic number {0:#010x}")]
    IdxMagic(u32),

    #[error("IDX payload truncated: expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX dimension mismatch: {0}")]
    IdxDimension(String),

    #[error("IDX label {0} out of range 0..=9")]
    IdxLabelRange(u8),

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{kind} file truncated: expected {expected} payload bytes, found {found}")]
    Truncated {
        kind: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

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
    /// Stable snake_case tag for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::InvalidShape { .. } => "shape",
            Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => "non_finite",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::MissingModality(_) => "missing_modality",
            Error::Misaligned(..) => "misaligned",
            Error::IdentityOutOfRange(_) | Error::MissingIdentity { .. } => "identity",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IdxMagic(_) | Error::IdxTruncated { .. } | Error::IdxDimension(_) | Error::IdxLabelRange(_) => "idx",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "config_schema",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
