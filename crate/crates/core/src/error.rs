use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value produced by `{primitive}` at tape node {node}")]
    NonFinite { primitive: &'static str, node: usize },

    #[error("division by zero at tape node {node}")]
    DivisionByZero { node: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A gradient field vanished where the model requires it to be nonzero.
    #[error("nondegeneracy violated: |grad {field}| = {norm:e} is below {threshold:e}")]
    Nondegenerate {
        field: &'static str,
        norm: f64,
        threshold: f64,
    },

    #[error("vector field component {index} is not finite")]
    NonFiniteRhs { index: usize },

    #[error("integrator stage {stage} is not finite at t = {t}")]
    NonFiniteStage { stage: usize, t: f64 },

    /// The adaptive integrator hit its step cap.
    #[error("integrator exceeded {max_steps} steps at t = {t} (problem too stiff)")]
    Stiffness { max_steps: usize, t: f64 },

    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("state outside the domain of {system}: {reason}")]
    Domain { system: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
