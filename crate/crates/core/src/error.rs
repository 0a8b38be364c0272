use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in field `{field}` at cell ({i}, {j})")]
    NonFinite { field: String, i: usize, j: usize },

    #[error("no-slip violated: boundary-normal face value {value} in `{component}` at index {index}")]
    NoSlip {
        component: &'static str,
        index: usize,
        value: f64,
    },

    #[error("velocity not divergence-free: max |div| = {max_div:e} exceeds {tolerance:e}")]
    NotDivergenceFree { max_div: f64, tolerance: f64 },

    #[error("unsupported norm exponent p = {0} (need p >= 1)")]
    InvalidExponent(f64),

    #[error("unknown initial-data preset `{0}`")]
    UnknownPreset(String),

    #[error("grid too large for the dense Stokes eigensolve ({unknowns} velocity unknowns > {limit}); disable Stokes diagnostics")]
    StokesTooLarge { unknowns: usize, limit: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
