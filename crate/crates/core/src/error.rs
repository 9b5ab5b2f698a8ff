use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("state has negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),

    #[error("unknown subsystem label {0}")]
    UnknownLabel(String),

    #[error("dense evaluation limited to N <= {max}, got N = {n}")]
    DenseTooLarge { n: usize, max: usize },

    #[error("invalid site: {0}")]
    InvalidSite(String),

    #[error("contraction produced imaginary part {0:.3e} for a real quantity")]
    ImaginaryPart(f64),

    #[error("non-finite objective at iteration {0}")]
    NonFinite(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
