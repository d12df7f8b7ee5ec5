use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument value is out of its valid domain.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("activation `{name}` rejected: {reason}")]
    Activation { name: String, reason: String },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("no speciation signal: sum of squared Gamma_0 projections is {0}")]
    NoSpeciationSignal(f64),

    #[error("no collapse time in ({lo}, {hi}): residual does not change sign")]
    NoCollapseTime { lo: f64, hi: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::Activation { .. } | Error::Config(_) => 2,
            Error::Unsupported(_) => 2,
            Error::Io(_) | Error::Json(_) => 3,
            _ => 3,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Activation { .. } => "activation",
            Error::Unsupported(_) => "unsupported",
            Error::NoSpeciationSignal(_) => "no_speciation_signal",
            Error::NoCollapseTime { .. } => "no_collapse_time",
            Error::Solver(_) => "solver",
            Error::Quadrature(_) => "quadrature",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn field(&self) -> Option<&'static str> {
        match self {
            Error::InvalidParameter { field, .. } => Some(field),
            _ => None,
        }
    }
}
