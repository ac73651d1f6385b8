use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("point ({x}, {y}) lies outside the model domain")]
    DomainError { x: f64, y: f64 },

    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("projected SOR did not converge after {iters} iterations (last delta {last_delta:e})")]
    NoConvergence { iters: usize, last_delta: f64 },

    #[error("operator diagonal {value:e} at node ({i}, {j}) is not strictly negative")]
    DiagonalSignError { i: usize, j: usize, value: f64 },

    #[error("x-grid does not contain both contact sets; truncated rows: {rows:?}")]
    DomainTooSmall { rows: Vec<usize> },

    #[error("value field is not monotone in x on row {row} (drop {drop:e} at node {node})")]
    NotMonotone { row: usize, node: usize, drop: f64 },

    #[error("anchor {alpha} lies outside the boundary gap ({lo}, {hi})")]
    AlphaOutsideGap { alpha: f64, lo: f64, hi: f64 },

    #[error("stationary density normalization failed: error {0:e}")]
    QuadratureFailure(f64),

    #[error("reflection band collapsed at y = {y}: lower {lower} >= upper {upper}")]
    BandCollapse { y: f64, lower: f64, upper: f64 },

    #[error("filter left [0, 1] at t = {t}: value {value}")]
    FilterEscape { t: f64, value: f64 },

    #[error("missing artifact `{0}`")]
    MissingArtifact(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
