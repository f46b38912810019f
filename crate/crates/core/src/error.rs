use thiserror::Error;

/// Errors raised by configuration handling, integration and verification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("atom time {t} lies outside the window [0, {horizon}]")]
    AtomOutOfWindow { t: f64, horizon: f64 },

    #[error("duplicate atom ({t}, {x}): configurations must be simple")]
    DuplicateAtom { t: f64, x: f64 },

    #[error("mark {x} is not a point of the mark space")]
    InvalidMark { x: f64 },

    #[error("invalid mark space: {0}")]
    InvalidMarkSpace(String),

    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),

    #[error("order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("quadrature over {dims} free slots is unsupported without a closed form")]
    UnsupportedDimension { dims: usize },

    #[error("factorial enumeration needs {terms} terms, budget is {budget}")]
    BudgetExceeded { terms: u128, budget: u128 },

    #[error("integration unavailable: {0}")]
    IntegrationUnavailable(String),

    #[error("chaos kernels unavailable for functional `{0}`")]
    KernelsUnavailable(String),

    #[error("predictable projection unavailable for functional `{0}`")]
    ProjectionUnavailable(String),

    #[error("annotation `{annotation}` of `{functional}` disagrees with brute force by {deviation:e}")]
    AnnotationMismatch {
        functional: String,
        annotation: &'static str,
        deviation: f64,
    },

    #[error("invalid hawkes model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
