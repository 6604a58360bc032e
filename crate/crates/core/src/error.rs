use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: [usize; 4] },
    #[error("spatial size {h}x{w} is not divisible by factor {factor}")]
    Divisibility { h: usize, w: usize, factor: usize },
    #[error("channel count {channels} is not divisible by {divisor}")]
    ChannelDivisibility { channels: usize, divisor: usize },
    #[error("cannot split an odd channel count ({0})")]
    OddChannels(usize),
    #[error("injective pad needs c_out >= {c_in}, got {c_out}")]
    Injectivity { c_in: usize, c_out: usize },
    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    InsufficientStatistics(usize),
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("missing batch-norm replay statistics: {0}")]
    MissingReplay(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed data at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
