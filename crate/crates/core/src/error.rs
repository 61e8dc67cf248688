use thiserror::Error;

/// Errors raised by the extremal-flow analyses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("pointwise minimizer did not converge after {iterations} iterations (gradient norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("control Hessian L_uu is singular or not positive definite")]
    SingularLuu,

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integration exceeded {steps} steps before reaching t = {target}")]
    TooManySteps { steps: usize, target: f64 },

    #[error("backward extremal from z escaped the radius at t = {tau}")]
    Escaped { tau: f64 },

    #[error("finite-difference neighborhood of z leaves the complete-arc domain")]
    EscapedNeighborhood,

    #[error("no extremal reaching the target was found in the search box")]
    NoRootFound,

    #[error("no generic perturbation found after {draws} draws (nearest omega residual {nearest:e})")]
    BudgetExhausted { draws: usize, nearest: f64 },

    #[error("perturbation C4 norm {norm:e} exceeds budget {budget:e}")]
    PerturbationTooLarge { norm: f64, budget: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown catalog entry: {0}")]
    UnknownCatalog(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize, context: &'static str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            found,
            context,
        })
    }
}
