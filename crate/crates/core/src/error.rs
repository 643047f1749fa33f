use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("channel mismatch: reference has {reference}, coded has {coded}")]
    ChannelMismatch { reference: usize, coded: usize },

    #[error("length mismatch: {reference} vs {coded} samples (tolerance {tolerance})")]
    LengthMismatch {
        reference: usize,
        coded: usize,
        tolerance: usize,
    },

    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("manifest line {line}: mos {mos} outside [0, 100]")]
    Range { line: usize, mos: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty signal")]
    EmptySignal,

    #[error("excerpt of {len} samples exceeds target length {target}")]
    TooLong { len: usize, target: usize },

    #[error("expected a stereo excerpt, got {0} channel(s)")]
    NotStereo(usize),

    #[error("expected a mono excerpt, got {0} channels")]
    NotMono(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint shapes incompatible: {0}")]
    ShapeIncompatible(String),

    #[error("checkpoint version {found} not supported (reader handles {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("dataset of {rows} rows cannot be split into {folds} folds")]
    DatasetTooSmall { rows: usize, folds: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid low-pass cutoff {0} Hz")]
    InvalidCutoff(f64),

    #[error("no source WAV files in {0}")]
    EmptySource(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
