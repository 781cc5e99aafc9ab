use std::path::PathBuf;

/// Errors produced by the front-end toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sample rate mismatch: signal is {signal} Hz, config expects {config} Hz")]
    SampleRateMismatch { signal: u32, config: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("window pair violates the overlap-add reconstruction identity (min normalization {min_norm:e})")]
    Reconstruction { min_norm: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("mask already averaged over channels")]
    AlreadyAveraged,

    #[error("mask value {value} at index {index} outside [0, 1]")]
    MaskRange { value: f32, index: usize },

    #[error("{format} parse error: {message}")]
    Format { format: &'static str, message: String },

    #[error("{format} file truncated: missing {section}")]
    Truncated {
        format: &'static str,
        section: &'static str,
    },

    #[error("position {0:?} is outside the room")]
    OutsideRoom([f64; 3]),

    #[error("source and microphone coincide")]
    CoincidentPositions,

    #[error("infeasible room placement: {0}")]
    Infeasible(String),

    #[error("image count {count} exceeds cap {cap}")]
    TooManyImages { count: usize, cap: usize },

    #[error("same speaker for base and interferer: {0}")]
    SameSpeaker(String),

    #[error("zero reference signal")]
    ZeroReference,

    #[error("session error: {0}")]
    Session(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
