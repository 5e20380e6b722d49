use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpelaError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite value detected: {0}")]
    NonFinite(String),
    #[error("coincident embedding vectors (energy is infinite)")]
    CoincidentVectors,
    #[error("stale or missing forward cache for local update")]
    StaleCache,
    #[error("profiler already attached or attached mid-run")]
    ProfilerAttach,
    #[error("bad file format: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SpelaError>;
