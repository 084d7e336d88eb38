use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("exponential moment diverges at lambda = {lambda} (decay abscissa {lambda0})")]
    DivergentMoment { lambda: f64, lambda0: f64 },

    #[error("kernel not supported here: {0}")]
    UnsupportedKernel(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("minimizer of the speed function sits on the search cap {cap}; q still decreasing")]
    UnboundedMinimizer { cap: f64 },

    #[error("speed {c} is below the minimal wave speed {c_star}: no real decay rates")]
    NoRoots { c: f64, c_star: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("strong Allee assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("upper/lower solution construction failed: {0}")]
    Construction(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("computational domain too small: {reason}; try a half-width of at least {suggested}")]
    DomainTooSmall { reason: String, suggested: f64 },

    #[error("cannot normalize profile: {0}")]
    Normalization(String),

    #[error("bad tail window: {0}")]
    Window(String),

    #[error("front history has {got} samples in the fit window, need at least {need}")]
    InsufficientHistory { got: usize, need: usize },

    #[error("time step {dt} exceeds the positivity bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error(
        "prey density fell to {value:.3e} at x = {x} (t = {t}); solution left the positive regime"
    )]
    BlowUp { value: f64, x: f64, t: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
