use std::fmt;

/// Tensor axis named in dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
    Kernel,
    Length,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Kernel => "kernel",
            Axis::Length => "length",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: {axis} mismatch (expected {expected}, got {actual})")]
    Dimension {
        op: &'static str,
        axis: Axis,
        expected: usize,
        actual: usize,
    },

    #[error("invalid convolution: {0}")]
    InvalidConv(String),

    #[error("batch norm channel {channel} has negative variance")]
    NegativeVariance { channel: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid network definition: {0}")]
    InvalidDef(String),

    #[error("in {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}`: {reason}")]
    BadTensor { name: String, reason: String },

    #[error("store already holds deployment weights; nothing left to fold")]
    AlreadyDeployed,

    #[error("not an RDRW file (bad magic)")]
    BadMagic,

    #[error("unsupported RDRW version {0}")]
    UnsupportedVersion(u16),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("malformed RDRW file: {0}")]
    Malformed(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("confusion matrix is empty")]
    EmptyConfusion,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: Axis, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }

    /// Wraps the error with the name of the network stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
