use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hurwitz")]
    NotHurwitz,

    #[error("pair (A, B) is not controllable")]
    NotControllable,

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Riccati solution escapes in finite time near t = {time}")]
    FiniteEscape { time: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("positivity inflation gave up after {0} doublings")]
    InflationLimit(u32),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
