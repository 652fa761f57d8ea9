use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error kinds surfaced by the library. The CLI maps these onto process exit
/// codes, so keep the classification stable: configuration and shape problems
/// are recoverable caller mistakes, `Diverged` and the checkpoint variants
/// signal failed runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A length precondition failed (power-of-two FFT sizes, empty inputs,
    /// signals shorter than an operation can support).
    #[error("invalid length: {0}")]
    InvalidLength(String),

    /// Tensor ranks or axis sizes do not match what an operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value is out of its legal range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A frequency argument lies outside the band an operation is defined on.
    #[error("out of band: {0}")]
    OutOfBand(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    /// A runtime numerical cross-check failed (e.g. two evaluation paths
    /// that must agree did not).
    #[error("numerical check failed: {0}")]
    Numeric(String),

    /// A checkpoint document is malformed or has an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A checkpoint tensor does not match the shape implied by its config.
    #[error("checkpoint shape mismatch at `{path}`: expected {expected:?}, got {got:?}")]
    CheckpointShape {
        path: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
