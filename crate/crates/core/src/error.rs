use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("{what}: t = {t} is outside the valid domain {domain}")]
    Domain {
        what: &'static str,
        t: f64,
        domain: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("size mismatch: expected {expected} values, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("time index {index} is not usable here (valid range {lo}..={hi})")]
    TimeIndex { index: usize, lo: usize, hi: usize },

    #[error("stability bound violated: dt = {dt} exceeds {limit}")]
    StabilityViolated { dt: f64, limit: f64 },

    #[error("positivity lost at t = {horizon} (node {node}, value {value})")]
    PositivityLost { horizon: f64, node: usize, value: f64 },

    #[error("solution exceeded {limit:e} at t = {horizon}")]
    BlowUp { horizon: f64, limit: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("constant fit infeasible: {0}")]
    Infeasible(String),

    #[error("quadrature did not converge: relative change {rel_change:e} under refinement")]
    Quadrature { rel_change: f64 },
}

impl LabError {
    pub(crate) fn domain(what: &'static str, t: f64, domain: impl Into<String>) -> Self {
        LabError::Domain {
            what,
            t,
            domain: domain.into(),
        }
    }

    /// Time reached before the solver gave up, for the two early-stop variants.
    pub fn reached_horizon(&self) -> Option<f64> {
        match self {
            LabError::PositivityLost { horizon, .. } | LabError::BlowUp { horizon, .. } => {
                Some(*horizon)
            }
            _ => None,
        }
    }
}
