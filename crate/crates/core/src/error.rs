use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate matrix (rank < 2), singular values {0:?}")]
    DegenerateMatrix([f64; 3]),

    #[error("degenerate rotation block for part {part}: {source}")]
    DegeneratePart {
        part: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid body model: {0}")]
    InvalidModel(String),

    #[error("point {index} is behind the camera (depth {depth} mm)")]
    BehindCamera { index: usize, depth: f64 },

    #[error("annotation mask enables no loss term")]
    EmptyMask,

    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
