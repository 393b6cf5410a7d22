use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("density has zero total mass")]
    ZeroMassDensity,

    #[error("polygon has no mass (mass = {0:e})")]
    EmptyCell(f64),

    #[error("sites {0} and {1} coincide")]
    DuplicateSites(usize, usize),

    #[error("site {0} has a cell of negligible mass ({1:e}) in the x-step")]
    EmptyCellEncountered(usize, f64),

    #[error("linear equality constraints are rank deficient")]
    SingularKkt,

    #[error("infeasible constraint system: {0}")]
    InfeasibleConstraints(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
