use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("slot {slot} out of range (scenario has {n_slots} slots)")]
    SlotOutOfRange { slot: usize, n_slots: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("layer {layer} ({kind}): {msg}")]
    Shape {
        layer: usize,
        kind: &'static str,
        msg: String,
    },

    #[error("forward cache is stale (cache version {cache}, model version {model})")]
    StaleCache { cache: u64, model: u64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("insufficient slots: need {needed}, have {available}")]
    InsufficientSlots { needed: usize, available: usize },

    #[error("non-integral measurement count: {size} x {num}/{den}")]
    NonIntegralCount { size: usize, num: usize, den: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("variant mismatch: model trained on {model}, input is {input}")]
    VariantMismatch { model: String, input: String },

    #[error("malformed handover log: {0}")]
    MalformedLog(String),

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration or input rather
    /// than by a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::NonIntegralCount { .. }
                | Error::Toml(_)
                | Error::SlotOutOfRange { .. }
                | Error::VariantMismatch { .. }
        )
    }
}
