//! Crate-wide error type.

/// Errors produced by scene I/O, the codec and the trainer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing property `{name}` in scene file")]
    MissingProperty { name: String },

    #[error("non-finite value in anchor {index} ({field})")]
    NonFinite { index: usize, field: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scene file: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("symbol overflow at anchor {anchor}, group {group}, channel {channel}: symbol {symbol} exceeds +/-32767")]
    SymbolOverflow {
        anchor: usize,
        group: &'static str,
        channel: usize,
        symbol: i64,
    },

    #[error("symbol at position {index} is outside its table's alphabet")]
    OutOfAlphabet { index: usize },

    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("decoder sequencing violation: {0}")]
    Sequencing(String),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
