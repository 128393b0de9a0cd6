use thiserror::Error;

/// Errors raised by lattice construction, scenario evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "lattice with {requested} steps exceeds the cap of {cap} steps \
         (2^{requested} leaves, about {bytes} bytes per scalar process); \
         raise IMPACT_BSDE_MAX_STEPS to override"
    )]
    StepCap {
        requested: usize,
        cap: usize,
        bytes: u128,
    },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("process is not a martingale: defect {defect:.3e} at step {step}, node {node}")]
    NotMartingale {
        step: usize,
        node: usize,
        defect: f64,
    },

    #[error(
        "stochastic exponential positivity guard violated at step {step}, node {node} \
         (|zeta * dB| = {value:.6}); refine the time step"
    )]
    ExponentialGuard { step: usize, node: usize, value: f64 },

    #[error("exponential overflow at step {step}, node {node}: {hint}")]
    Overflow {
        step: usize,
        node: usize,
        hint: String,
    },

    #[error("non-finite value in {what} at step {step}, node {node}")]
    NonFinite {
        what: String,
        step: usize,
        node: usize,
    },

    #[error("random variable is not centered (mean {mean:.3e}); center it first")]
    NotCentered { mean: f64 },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
