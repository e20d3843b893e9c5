use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// The adaptive integrator could not take a step without violating the
    /// error tolerances. Carries the time and state where it gave up.
    #[error("step size underflow at t = {t}: h = {h:.3e} (state {state:?})")]
    StepSizeUnderflow { t: f64, h: f64, state: Vec<f64> },

    /// Solution left the finite range (blow-up or NaN).
    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    /// Newton iteration failed to reach the requested tolerance.
    #[error("Newton did not converge: residual {residual:.3e} after {iterations} iterations")]
    NewtonNoConvergence { residual: f64, iterations: usize },

    /// A linear solve inside a Newton or continuation step was singular.
    #[error("singular linear system in {context}")]
    SingularSystem { context: &'static str },

    /// Pseudo-arclength step size fell below the minimum.
    #[error("continuation step underflow at step {step}: ds = {ds:.3e}")]
    StepUnderflow { step: usize, ds: f64 },

    /// An input violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration file failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
