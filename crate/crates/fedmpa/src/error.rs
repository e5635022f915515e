//! Crate-wide error type with one variant per failure category.

use std::path::PathBuf;

/// Alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible matrix or vector dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value outside the documented domain of an argument.
    #[error("domain error: {0}")]
    Domain(String),

    /// A loss was requested over an empty node subset.
    #[error("domain error: empty mask for {0}")]
    EmptyMask(String),

    /// A graph violates a structural invariant (asymmetry, unsorted or
    /// duplicate column indices, out-of-range endpoints).
    #[error("structural error: {0}")]
    Structure(String),

    /// NaN or infinity produced where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Clients and server disagree about the shape or kind of a round.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A client submitted a payload that would corrupt the aggregate.
    #[error("poisoned round: client {client}: {detail}")]
    PoisonedRound { client: usize, detail: String },

    /// An API was used against its documented contract, e.g. a forward tape
    /// replayed after the parameters changed.
    #[error("contract error: {0}")]
    Contract(String),

    /// A request exceeds a configured resource budget.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A config file failed to parse.
    #[error("config error at line {line}: {detail}")]
    Config { line: usize, detail: String },

    /// A dataset file is missing.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// A dataset file exists but its contents are inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid command-line usage.
    #[error("usage error: {0}")]
    Usage(String),

    /// A failure that occurred inside one repeat of an experiment.
    #[error("repeat {index}: {source}")]
    Repeat {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code for the CLI, one per failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config { .. } => 3,
            Error::MissingFile(_) | Error::Data(_) => 4,
            Error::Shape(_) | Error::Domain(_) | Error::EmptyMask(_) | Error::Structure(_) => 5,
            Error::Protocol(_) | Error::PoisonedRound { .. } => 6,
            Error::NonFinite(_) | Error::Contract(_) => 7,
            Error::Capacity(_) => 8,
            Error::Repeat { source, .. } => source.exit_code(),
            Error::Io(_) => 10,
        }
    }
}
