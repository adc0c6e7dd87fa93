//! Crate-wide error type.

use std::path::PathBuf;

/// Errors returned by the forensics pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported channel count {channels} in {path} (mono required)")]
    UnsupportedChannels { path: PathBuf, channels: u16 },

    #[error("unsupported codec in {path}: {reason} (PCM16 or float32 required)")]
    UnsupportedCodec { path: PathBuf, reason: String },

    #[error("unsupported target sample rate {rate_hz} Hz (minimum 8000)")]
    UnsupportedRate { rate_hz: u32 },

    #[error("audio clip violates invariants: {0}")]
    InvalidClip(String),

    #[error("insufficient audio: {0}")]
    InsufficientAudio(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular gradient: {0}")]
    SingularGradient(String),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("insufficient classes: need at least 2 driver identities, got {got}")]
    InsufficientClasses { got: usize },

    #[error("insufficient identities: need at least {need}, got {got}")]
    InsufficientIdentities { need: usize, got: usize },

    #[error("empty enrollment clip list for identity {identity}")]
    EnrollmentEmpty { identity: String },

    #[error("enrollment policy violation: {0}")]
    PolicyViolation(String),

    #[error("head version mismatch: profile built under {profile}, scoring under {scoring}")]
    HeadVersionMismatch { profile: String, scoring: String },

    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("corrupt profile {path}: {reason}")]
    CorruptProfile { path: PathBuf, reason: String },

    #[error("missing profile for identity {identity}")]
    MissingProfile { identity: String },

    #[error("missing embedding for clip {clip_id} in external table")]
    MissingEmbedding { clip_id: String },

    #[error("degenerate trial set: {0}")]
    DegenerateTrials(String),

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
