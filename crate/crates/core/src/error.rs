use thiserror::Error;

/// Errors raised by the library. Numeric payloads are reported as `f64`
/// regardless of the scalar type the failing routine ran with.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("drift or diffusion evaluation failed at x = {x}: got {value}")]
    Evaluation { x: f64, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("step size underflow at t = {t} (x = {x})")]
    Stiffness { t: f64, x: f64 },

    #[error("origin is a fixed point and never exits")]
    UndefinedExit,

    #[error("linearization did not converge at x = {x} within t = {t_max}")]
    Convergence { x: f64, t_max: f64 },

    #[error("linearization table is not strictly increasing near x = {x}")]
    Monotonicity { x: f64 },

    #[error("quadrature did not reach the requested tolerance (estimate {estimate}, error {error})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("non-finite state in path {path_index} (seed {seed:#018x}) at t = {t}")]
    NonFinite { path_index: u64, seed: u64, t: f64 },

    #[error("only {got} conditioned samples survived (need at least {need}); try a larger epsilon or a smaller alpha")]
    InsufficientConditioning { got: usize, need: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input")]
    EmptyInput,

    #[error("regression needs positive tail estimates; p_hat = 0 at epsilon = {epsilon}")]
    Regression { epsilon: f64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("worker panicked on path {path_index}; {completed} paths completed")]
    WorkerPanic { path_index: u64, completed: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
