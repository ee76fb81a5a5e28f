use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("tridiagonal eigensolver failed (info = {0})")]
    Eigensolver(i32),

    #[error("shifted operator is not positive: eigenvalue {eigenvalue} + 3 <= 0")]
    NegativeShift { eigenvalue: f64 },

    #[error("function is not finite at eigenvalue {eigenvalue}")]
    NonFiniteFunction { eigenvalue: f64 },

    #[error("small divisor {divisor:e} at mode {mode:?}")]
    SmallDivisor { divisor: f64, mode: Vec<i64> },

    #[error("matrix is not elliptic (trace {trace})")]
    NotElliptic { trace: f64 },

    #[error("determinant {det} differs from one")]
    NotUnimodular { det: f64 },

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eigensolver(_)
                | Error::NonFiniteFunction { .. }
                | Error::SmallDivisor { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
