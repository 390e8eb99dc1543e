use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested kernel.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid length configuration: {0}")]
    LengthConfig(String),

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("non-finite {component} loss at step {step}: {value}")]
    NonFiniteLoss {
        step: usize,
        component: String,
        value: f64,
    },

    #[error(
        "no configuration on the frontier fits a budget of {budget} FLOPs (cheapest is {cheapest})"
    )]
    NoFeasibleConfig { budget: u64, cheapest: u64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
