use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("normal map has no masked pixels")]
    EmptyMask,

    #[error("degenerate light: shading denominator floored on {floored} of {masked} masked pixels")]
    DegenerateLight { floored: usize, masked: usize },

    #[error("singular light fit: design matrix rank {rank} < 9")]
    SingularFit { rank: usize },

    #[error("embedder `{0}` does not provide input gradients")]
    NotDifferentiable(String),

    #[error("embedding protocol: {0}")]
    Protocol(String),

    #[error("embedding endpoint timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("lighting map carries no light")]
    NoLight,

    #[error("recurrence loop did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        poses: Vec<crate::phy::PLSPose>,
        trace: Vec<crate::phy::NavFeedback>,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("degenerate labels: ground truth has {positives} positives and {negatives} negatives")]
    DegenerateLabels { positives: usize, negatives: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
