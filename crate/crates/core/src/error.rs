use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("zero-length audio")]
    EmptyAudio,

    #[error("non-finite sample at channel {channel}, index {index}")]
    NonFiniteSample { channel: usize, index: usize },

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("J exceeds M: {speakers} speakers for {mics} microphones")]
    TooManySpeakers { speakers: usize, mics: usize },

    #[error("invalid STFT config: {0}")]
    InvalidStft(String),

    #[error("clip of {len} samples is shorter than one {fft_size}-sample frame")]
    ClipTooShort { len: usize, fft_size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty frame set: {0}")]
    EmptyFrameSet(String),

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("all-zero matrix at bin {0}")]
    ZeroMatrix(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero distance between source and microphone {0}")]
    ZeroDistance(usize),

    #[error("optimization diverged at iteration {0}: non-finite loss")]
    Diverged(usize),

    #[error("zero reference signal")]
    ZeroReference,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("{0}")]
    Pipeline(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
