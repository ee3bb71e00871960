use thiserror::Error;

/// Errors raised anywhere in the tracker stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer received operands whose shapes do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid configuration value; the message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector too close to zero to be projected onto the unit sphere.
    #[error("cannot l2-normalize a vector of norm {0:e}")]
    Normalization(f64),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    /// A crop requested a region that does not intersect the image at all.
    #[error("patch {0} has no overlap with the image")]
    NoOverlap(String),

    #[error("target lost: {0}")]
    LostTarget(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Invalid synthetic sequence description.
    #[error("sequence spec: {0}")]
    Spec(String),

    #[error("length mismatch: {0} predictions vs {1} ground-truth boxes")]
    LengthMismatch(usize, usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
