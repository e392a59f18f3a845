use thiserror::Error;

/// Errors raised by the model, the engines and the runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("jacobian collapse at label node {node} (t = {time}): J = {jacobian:e}")]
    JacobianCollapse { node: usize, time: f64, jacobian: f64 },

    #[error("wavefunction leaks through the periodic boundary at t = {time}: |psi| = {amplitude:e}")]
    BoundaryLeak { time: f64, amplitude: f64 },

    #[error("point {point:?} is too close to a node of the wavefunction (|psi|^2 = {density:e})")]
    NodeProximity { point: Vec<f64>, density: f64 },

    #[error("point {0:?} lies outside the image of the label grid")]
    OutsideCongruence(Vec<f64>),

    #[error("inverse label map did not converge at {point:?} (residual {residual:e})")]
    NoConvergence { point: Vec<f64>, residual: f64 },

    #[error("label grid is not invariant under exchange of particles {0} and {1}")]
    GridNotExchangeSymmetric(usize, usize),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerical method itself (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::JacobianCollapse { .. }
                | Error::BoundaryLeak { .. }
                | Error::NodeProximity { .. }
                | Error::OutsideCongruence(_)
                | Error::NoConvergence { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
