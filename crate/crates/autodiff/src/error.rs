use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry in {op}: {detail}")]
    InvalidGeometry { op: &'static str, detail: String },

    #[error("degenerate input in {op}: {detail}")]
    DegenerateInput { op: &'static str, detail: String },

    #[error("backward root must have shape [1], got {0:?}")]
    NotScalar(Vec<usize>),

    #[error("gradient tracking is disabled on this graph")]
    NoTape,

    #[error("variable belongs to a different graph")]
    ForeignVar,

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("malformed tensor blob: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidGeometry {
        op,
        detail: detail.into(),
    }
}
