use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("expected a mono file, found {channels} channels")]
    ChannelCount { channels: u16 },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("sample rate mismatch: signal is {found} Hz, configuration expects {expected} Hz")]
    SampleRate { expected: u32, found: u32 },

    #[error("invalid audio buffer: {0}")]
    InvalidBuffer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("signal of {len} samples is shorter than one analysis window of {window}")]
    SignalTooShort { len: usize, window: usize },

    #[error("parameter fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("malformed parameter file: {0}")]
    Container(String),

    #[error("objective returned a non-finite value: {0}")]
    NonFinite(String),

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
