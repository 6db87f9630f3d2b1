use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] kanfpn_autodiff::Error),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("polynomial basis input outside [-1, 1]: max |s| = {0}")]
    DomainViolation(f64),

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("could not place figure inside the image after {0} attempts")]
    PlacementFailure(usize),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("unknown gradient-check scope `{0}`")]
    UnknownScope(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Tensor(kanfpn_autodiff::Error::InvalidGeometry {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Tensor(kanfpn_autodiff::Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
