use thiserror::Error;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input: bad dimensions, invalid parameters, parse failures.
    Input,
    /// A checkable hypothesis (radius or contraction condition) does not hold.
    Hypothesis,
    /// A numerical routine failed: singular systems, stalled iterations, budgets.
    Numeric,
}

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value: {message} (coordinates {coordinates:?})")]
    NonFinite {
        message: String,
        coordinates: Vec<usize>,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("matrix is singular to working precision (pivot {pivot:e}, scale {scale:e})")]
    Singular { pivot: f64, scale: f64 },

    #[error("power iteration did not converge in {iterations} iterations (last estimate {last_estimate})")]
    PowerIteration {
        iterations: usize,
        last_estimate: f64,
    },

    #[error("resolvent solve failed at eps = {eps:e}: {source}")]
    ResolventAt {
        eps: f64,
        #[source]
        source: Box<DsmError>,
    },

    #[error("flow failed at t = {t}: {source}")]
    FlowFailure {
        t: f64,
        #[source]
        source: Box<DsmError>,
    },

    #[error("step size underflow at t = {t} (h = {step:e}); the flow is too stiff for the explicit integrator")]
    Stiffness { t: f64, step: f64 },

    #[error("step budget of {max_steps} exceeded at t = {t}")]
    Budget { max_steps: usize, t: f64 },

    #[error("hypothesis violated: {condition} ({quantity} = {value})")]
    Hypothesis {
        condition: String,
        quantity: &'static str,
        value: f64,
    },

    #[error("source element unavailable: {0}")]
    SourceUnavailable(String),

    #[error("fixed-point iteration diverged after {iterations} iterations")]
    Divergence {
        iterations: usize,
        step_norms: Vec<f64>,
    },

    #[error("insufficient data: {usable} usable records, at least {required} required")]
    InsufficientData { usable: usize, required: usize },

    #[error("problem spec error: {0}")]
    Spec(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("all {count} solves along the path failed; first failure: {first}")]
    PathFailed { count: usize, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DsmError {
    pub fn input(msg: impl Into<String>) -> Self {
        DsmError::Input(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            DsmError::Input(_)
            | DsmError::Spec(_)
            | DsmError::Parse { .. }
            | DsmError::InsufficientData { .. }
            | DsmError::Io(_)
            | DsmError::Json(_)
            | DsmError::Csv(_) => ErrorClass::Input,
            DsmError::Hypothesis { .. } => ErrorClass::Hypothesis,
            DsmError::ResolventAt { source, .. } | DsmError::FlowFailure { source, .. } => {
                match source.class() {
                    ErrorClass::Hypothesis => ErrorClass::Hypothesis,
                    _ => ErrorClass::Numeric,
                }
            }
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, DsmError>;
