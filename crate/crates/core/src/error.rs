//! Error type shared by every module in the crate.

use thiserror::Error;

/// All failure modes of the toolkit.
#[derive(Debug, Error)]
pub enum EekdError {
    /// A tensor or parameter shape does not match what an operation requires.
    /// `axis` names the offending dimension.
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    /// Softmax temperature must be strictly positive.
    #[error("invalid temperature {0}: tau must be > 0")]
    InvalidTemperature(f64),

    /// A configuration value violates its contract.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An epoch index fell outside the schedule it was asked about.
    #[error("epoch {epoch} out of range [0, {total_epochs})")]
    EpochOutOfRange { epoch: usize, total_epochs: usize },

    /// Non-finite value produced where the contract requires finite output.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An IDX file carried the wrong magic number.
    #[error("IDX format error: expected magic {expected:#010x}, found {found:#010x}")]
    IdxMagic { expected: u32, found: u32 },

    /// Image and label files disagree on the sample count.
    #[error("IDX consistency error: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint format error: expected magic \"EEKD\", found {found:?}")]
    CheckpointMagic { found: [u8; 4] },

    /// Checkpoint carries an unsupported format version.
    #[error("checkpoint version error: expected {expected}, found {found}")]
    CheckpointVersion { expected: u32, found: u32 },

    /// Checkpoint payload or metadata is damaged.
    #[error("checkpoint corruption: {0}")]
    CheckpointCorrupt(String),

    /// An operation was called with a strategy it does not serve.
    #[error("contract error: {0}")]
    Contract(String),

    /// A weight row left the simplex by more than the allowed slack.
    #[error("invariant violation: weight row {row} sums to {sum}, expected 1 within 1e-9")]
    SimplexViolation { row: usize, sum: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EekdError>;
