use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dimension: {0}")]
    EmptyDimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("sensitivity maps not normalized at (y={y}, x={x}): sum |S_c|^2 = {sum}")]
    NotNormalized { y: usize, x: usize, sum: f64 },
    #[error("invalid sampling mask: {0}")]
    InvalidMask(String),
    #[error("buffer length mismatch: header implies {expected} bytes, payload has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unknown dtype tag {0:?}")]
    UnknownDtype(String),
    #[error("malformed KTC header: {0}")]
    Header(String),
    #[error("calibration region is empty")]
    EmptyAcs,
    #[error("calibration region is all zero")]
    ZeroAcs,
    #[error("insufficient calibration data: {positions} interior positions, need at least {required}")]
    InsufficientAcs { positions: usize, required: usize },
    #[error("iteration index {index} out of range for unroll depth {depth}")]
    IndexOutOfRange { index: usize, depth: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("window of {window} does not fit in {ny}x{nx} image")]
    WindowTooLarge { window: usize, ny: usize, nx: usize },
    #[error("reference has zero energy")]
    ZeroReference,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
