use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("actor `{actor}` has no pose at time index {time_index}")]
    MissingPose { actor: String, time_index: usize },

    #[error("time index {0} is outside the scene timeline")]
    UnknownTime(usize),

    #[error("camera id {0} has no embedding")]
    UnknownCamera(u32),

    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: unsupported scene version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: i64, expected: i64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale cache: {0}")]
    StaleCache(&'static str),

    #[error("{path}: decode error: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: bad PFM header: {message}")]
    Header { path: PathBuf, message: String },

    #[error("frame {0} has no normal prior")]
    MissingPrior(usize),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
