use thiserror::Error;

/// Everything that can go wrong while building, solving or verifying a game contract.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("DegenerateLattice: {0}")]
    DegenerateLattice(String),

    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),

    #[error("OutOfRange: {0}")]
    OutOfRange(String),

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),

    #[error("NonFiniteInput: {0}")]
    NonFiniteInput(String),

    #[error("InvalidGenerator: {0}")]
    InvalidGenerator(String),

    #[error("ContractionViolated: {0}")]
    ContractionViolated(String),

    #[error("NonConvergence: fixed point at step {step}, node {up_count} failed after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        step: usize,
        up_count: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("ObstacleOrderViolated: lower {lower} >= upper {upper} at node ({step},{up_count})")]
    ObstacleOrderViolated {
        step: usize,
        up_count: usize,
        lower: f64,
        upper: f64,
    },

    #[error("TerminalOutOfBand: terminal value {value} outside [{lower}, {upper}] at terminal node {up_count}")]
    TerminalOutOfBand {
        up_count: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("InvalidStoppingRule: {0}")]
    InvalidStoppingRule(String),

    #[error("TooLarge: {nodes} non-terminal nodes would need {} rules per player (limit 2^{limit})", rule_count(*.nodes, *.rules))]
    TooLarge {
        nodes: usize,
        /// `2^nodes`, or `None` when it does not fit in a `u128`.
        rules: Option<u128>,
        limit: usize,
    },

    #[error("TooManyPaths: 2^{steps} paths exceeds the limit 2^{limit}")]
    TooManyPaths { steps: usize, limit: usize },

    #[error("ContractInvariantViolated: {0}")]
    ContractInvariantViolated(String),

    #[error("InvalidPenalty: penalty must be strictly positive, got {0}")]
    InvalidPenalty(f64),

    #[error("InvalidParameters: {0}")]
    InvalidParameters(String),

    #[error("NonFiniteState: wealth became non-finite at step {step} on path {path}")]
    NonFiniteState { step: usize, path: u64 },

    #[error("Config: {0}")]
    Config(String),

    #[error("Io: {0}")]
    Io(String),
}

fn rule_count(nodes: usize, rules: Option<u128>) -> String {
    match rules {
        Some(r) => format!("2^{nodes} = {r}"),
        None => format!("2^{nodes}"),
    }
}

impl Error {
    /// Whether the error comes from the input description rather than from the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLattice(_)
                | Error::InvalidGrid(_)
                | Error::ShapeMismatch(_)
                | Error::InvalidGenerator(_)
                | Error::ContractInvariantViolated(_)
                | Error::InvalidPenalty(_)
                | Error::InvalidParameters(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
