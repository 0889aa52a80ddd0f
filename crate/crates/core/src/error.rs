use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tag scheme error: {0}")]
    Scheme(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
