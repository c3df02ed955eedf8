use num_complex::Complex64;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Series argument too close to a pole of the evaluated function.
    #[error("argument {w} is within the guard distance of the pole at {pole}")]
    Pole { w: Complex64, pole: f64 },
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Event budget exhausted before reaching the requested time.
    #[error("event budget exhausted after {events} events at time {time}")]
    Budget { events: u64, time: f64 },
    /// Quadrature contour violates a geometric admissibility condition.
    #[error("contour geometry violated: {0}")]
    Contour(String),
    /// A numerical procedure failed its self-consistency gate.
    #[error("convergence failure: {0}")]
    Convergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
