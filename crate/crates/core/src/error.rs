use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("scene '{scene_id}' is {height}x{width}, smaller than the {window}px window")]
    SceneTooSmall {
        scene_id: String,
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("value outside the loss domain: {0}")]
    Domain(String),

    #[error("{0}")]
    Capability(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("confusion counts are empty; nothing was evaluated")]
    EmptyEvaluation,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid user-supplied settings.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
