use std::path::PathBuf;

/// Errors produced across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token level mismatch: {left:?} vs {right:?}")]
    LevelMismatch { left: crate::metrics::Level, right: crate::metrics::Level },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal has zero energy")]
    ZeroSignal,

    #[error("CTC target needs at least {required} frames, got {frames}")]
    CtcLength { frames: usize, required: usize },

    #[error("non-finite loss at iteration {iteration} (last losses: {trace:?})")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },

    #[error("model `{model}` failed: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown model adapter `{name}` (known: {known:?})")]
    UnknownModel { name: String, known: Vec<String> },

    #[error("model adapter `{0}` is already registered")]
    DuplicateModel(String),

    #[error("training diverged for seed {seed} at epoch {epoch}")]
    Divergence { seed: u64, epoch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: malformed manifest record: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("report rendering failed: {0}")]
    Render(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches the identity of the model that produced this error.
    pub fn in_model(self, model: impl Into<String>) -> Self {
        Error::Model { model: model.into(), source: Box::new(self) }
    }
}
