use thiserror::Error;

pub type Result<T> = std::result::Result<T, BanError>;

#[derive(Debug, Error)]
pub enum BanError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model defect: {0}")]
    ModelDefect(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus too short: {len} bytes, batch size {batch}")]
    CorpusTooShort { len: usize, batch: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,

    #[error("wrong model: container expects hash {expected:016x}, model has {found:016x}")]
    ModelHashMismatch { expected: u64, found: u64 },

    #[error("container references an external model but none was supplied")]
    MissingModel,

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("quadrature did not converge: relative change {rel_change:e} on grid refinement")]
    QuadratureNonConvergence { rel_change: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
