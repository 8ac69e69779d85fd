use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid genotype: {0}")]
    Validation(String),

    #[error("non-finite body state at t = {time:.6} s")]
    NonFiniteState { time: f64 },

    #[error("simulation became unstable at t = {time:.6} s")]
    Unstable { time: f64 },

    #[error("x = {x} lies outside terrain extent [{lo}, {hi}]")]
    OutOfExtent { x: f64, lo: f64, hi: f64 },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("non-finite descriptor value {0}")]
    NonFiniteDescriptor(f64),

    #[error("variance of an empty sample sequence")]
    EmptySamples,

    #[error("optimizer degenerate: {0}")]
    Degenerate(String),

    #[error("ask/tell protocol violation: {0}")]
    Protocol(String),

    #[error("malformed record: {0}")]
    Format(String),

    #[error("aggregation error: {0}")]
    Aggregate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Qualify a configuration error's field path with its enclosing section.
    pub(crate) fn within(self, section: &str) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{section}.{m}")),
            e => e,
        }
    }
}
