use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("operand form mismatch: expected {expected}, got {got}")]
    FormMismatch { expected: &'static str, got: &'static str },

    #[error("scale mismatch: {a} vs {b} (relative {rel:.3e} exceeds 2^-10)")]
    ScaleMismatch { a: f64, b: f64, rel: f64 },

    #[error("multiplicative depth exhausted: ciphertext already at level 0")]
    DepthExhausted,

    #[error("no rotation key for offset {offset}")]
    KeyNotFound { offset: usize },

    #[error("layout capacity exceeded: need {need} slots, have {have}")]
    Capacity { need: usize, have: usize },

    #[error("model error at layer {layer}: {reason}")]
    Model { layer: usize, reason: String },

    #[error("model depth {need} exceeds level budget {have} at layer {layer}")]
    DepthOverflow { layer: usize, need: usize, have: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("params hash mismatch (sender {sender})")]
    ParamsHashMismatch { sender: u16 },

    #[error("duplicate share from party {party}")]
    DuplicateShare { party: u16 },

    #[error("share count mismatch: got {got}, expected {expected}")]
    ShareCount { got: usize, expected: usize },

    #[error("timed out waiting for party {party} during {phase}")]
    Timeout { phase: &'static str, party: u16 },

    #[error("framing error: {0}")]
    Framing(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("unknown record {0}")]
    UnknownRecord(String),

    #[error("session aborted by {sender}: {reason}")]
    RemoteAbort { sender: u16, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
