use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion")]
    DegenerateQuaternion,
    #[error("not a rotation")]
    NotARotation,
    #[error("index {index} out of range ({len} gaussians)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-positive scale")]
    NonPositiveScale,
    #[error("singular covariance")]
    SingularCovariance,
    #[error("cannot sample {requested} superpoints from {available} points")]
    TooManySamples { requested: usize, available: usize },
    #[error("K = {k} exceeds superpoint count {m}")]
    TooManyNeighbors { k: usize, m: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image too small for SSIM: {width}x{height} (need at least 11x11)")]
    ImageTooSmall { width: usize, height: usize },
    #[error("empty cloud")]
    EmptyCloud,
    #[error("empty scene")]
    EmptyScene,
    #[error("need ≥ 2 timesteps")]
    TooFewTimesteps,
    #[error("unknown superpoint id {0}")]
    UnknownSuperpoint(usize),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
