use thiserror::Error;

/// Violated parameter invariant. The message names the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{0} must be > 0")]
    NonPositive(&'static str),
    #[error("{0} must be >= 0")]
    Negative(&'static str),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("b_alpha must be nonzero")]
    ZeroControlGain,
    #[error("lambda out of [0,1]")]
    LambdaOutOfRange,
    #[error("p out of [0,1]")]
    ProportionOutOfRange,
    #[error("{group} group: {source}")]
    Group {
        group: &'static str,
        #[source]
        source: Box<ParamError>,
    },
}

impl ParamError {
    /// Name of the offending field, as it appears in configuration files.
    pub fn field(&self) -> &'static str {
        match self {
            ParamError::NonPositive(f) | ParamError::Negative(f) | ParamError::NonFinite(f) => f,
            ParamError::ZeroControlGain => "b_alpha",
            ParamError::LambdaOutOfRange => "lambda",
            ParamError::ProportionOutOfRange => "p",
            ParamError::Group { source, .. } => source.field(),
        }
    }
}

/// Failure of a Riccati or linear ODE integration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("Riccati blow-up in the {equation} equation at t = {time} (node {node})")]
    BlowUp {
        equation: &'static str,
        node: usize,
        time: f64,
    },
    #[error("time {t} outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("non-finite state in run {run}, agent {agent}, step {step}")]
    NonFinite { run: usize, agent: usize, step: usize },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("policy horizon {policy} does not match model horizon {model}")]
    HorizonMismatch { policy: f64, model: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("E must be Hermitian")]
    NotHermitian,
    #[error("E must be positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}
