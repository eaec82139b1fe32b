use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("noise variance must be {expected}, got {value}")]
    InvalidNoiseVariance { value: f64, expected: &'static str },

    #[error("reference channel has zero energy")]
    ZeroReference,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("singular value decomposition failed for subcarrier {0}")]
    SvdFailed(usize),

    #[error("non-finite values in {stage} (layer {layer})")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("no weight for configuration M={m}, SNR={snr_db} dB")]
    MissingConfig { m: usize, snr_db: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
