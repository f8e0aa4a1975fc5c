use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("discount must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),

    #[error("target discount {gamma_tilde} must satisfy {gamma} <= gamma_tilde < 1")]
    InvalidTargetDiscount { gamma: f64, gamma_tilde: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid MDP: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMdp(Vec<crate::mdp::Violation>),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("singular linear system")]
    Singular,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_discount(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(gamma))
    }
}

pub(crate) fn check_target_discount(gamma: f64, gamma_tilde: f64) -> Result<()> {
    check_discount(gamma)?;
    if gamma_tilde >= gamma && gamma_tilde < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTargetDiscount { gamma, gamma_tilde })
    }
}
