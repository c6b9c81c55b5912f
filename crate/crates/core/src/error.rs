use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid source descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("raw-bit file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("operating-system entropy unavailable: {0}")]
    OsEntropyUnavailable(String),
    #[error("source exhausted: requested {requested} bits, {available} remain")]
    SourceExhausted { requested: u64, available: u64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("extractor needs at least 2 input bits, got {0}")]
    InsufficientInput(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("requested {requested} output bytes, limit is {limit}")]
    OutputTooLong { requested: usize, limit: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("batch too small: need {needed} bits, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("health check failed on batch {batch_id}; source halted")]
    HealthFailure { batch_id: u64 },
    #[error("primary and backup entropy sources both failed health checks")]
    AllSourcesFailed,

    #[error("input too short: need {needed} bytes, got {got}")]
    InputTooShort { needed: usize, got: usize },
    #[error("sample {index} too short: need {needed} bits, got {got}")]
    SampleTooShort { index: usize, needed: usize, got: usize },

    #[error("key derivation failed: {0}")]
    DerivationFailure(String),
    #[error("epoch {0} is active and cannot be erased")]
    EpochActive(u64),
    #[error("epoch {0} not found")]
    NotFound(u64),
    #[error("key material for epoch {0} has been erased")]
    KeyErased(u64),
    #[error("keystore has no active epoch")]
    NoActiveEpoch,
    #[error("keystore format error: {0}")]
    KeystoreFormat(String),
    #[error("keystore is locked by another session")]
    KeystoreLocked,

    #[error("bad container magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("container truncated or length fields inconsistent")]
    Truncated,
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("message of {0} bytes exceeds the counter-mode limit")]
    MessageTooLong(u64),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDescriptor(_) => "InvalidDescriptor",
            Error::FileNotFound(_) => "FileNotFound",
            Error::OsEntropyUnavailable(_) => "OsEntropyUnavailable",
            Error::SourceExhausted { .. } => "SourceExhausted",
            Error::Io(_) => "IoError",
            Error::InsufficientInput(_) => "InsufficientInput",
            Error::EmptyInput => "EmptyInput",
            Error::OutputTooLong { .. } => "OutputTooLong",
            Error::InvalidPolicy(_) => "InvalidPolicy",
            Error::BatchTooSmall { .. } => "BatchTooSmall",
            Error::HealthFailure { .. } => "HealthFailure",
            Error::AllSourcesFailed => "AllSourcesFailed",
            Error::InputTooShort { .. } => "InputTooShort",
            Error::SampleTooShort { .. } => "SampleTooShort",
            Error::DerivationFailure(_) => "DerivationFailure",
            Error::EpochActive(_) => "EpochActive",
            Error::NotFound(_) => "NotFound",
            Error::KeyErased(_) => "KeyErased",
            Error::NoActiveEpoch => "NoActiveEpoch",
            Error::KeystoreFormat(_) => "KeystoreFormat",
            Error::KeystoreLocked => "KeystoreLocked",
            Error::BadMagic => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::Truncated => "Truncated",
            Error::Malformed(_) => "Malformed",
            Error::TagMismatch => "TagMismatch",
            Error::MessageTooLong(_) => "MessageTooLong",
        }
    }
}
