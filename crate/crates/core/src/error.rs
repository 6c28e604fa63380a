use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("potential has a value jump at x = {x}; gradient undefined")]
    NonDifferentiable { x: f64 },

    #[error("exp(-V) is not integrable: {side} tail does not grow at least linearly")]
    NonIntegrableTail { side: &'static str },

    #[error("quadrature did not reach tolerance on [{lo}, {hi}]: {reason}")]
    QuadratureFailure { lo: f64, hi: f64, reason: String },

    #[error("power-law fit unstable: log-space residual {residual:.3e} exceeds {limit:.3e}")]
    FitUnstable { residual: f64, limit: f64 },

    #[error("flow halted: density left the slope domain ({reason} at {location})")]
    RegularityHalt { reason: String, location: f64 },

    #[error("step violates the injectivity bound: h = {h} >= {bound}{}", witness.map(|w| format!(", T'({w}) <= 0")).unwrap_or_default())]
    InvalidStep {
        h: f64,
        bound: f64,
        witness: Option<f64>,
    },

    #[error("transport map is constant on [{lo}, {hi}]; pushforward has an atom")]
    DegenerateMap { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed description: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
