use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a unit vector, got norm {norm}")]
    NotUnitVector { norm: f64 },

    #[error("matrix is not a rotation (orthogonality residual {orthogonality:e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bearing undefined at t = {t}: vehicle is {distance:e} m from the landmark")]
    BearingUndefined { t: f64, distance: f64 },

    #[error("attitude reconstruction degenerate: |g x m| = {cross_norm:e}")]
    ReconstructionDegenerate { cross_norm: f64 },

    #[error("numerical failure at t = {t}: Riccati matrix lost positive definiteness (min eigenvalue {min_eigenvalue:e})")]
    NumericalFailure { t: f64, min_eigenvalue: f64 },

    #[error("frame timestamp {got} does not follow state time by dt (expected {expected})")]
    TimeMismatch { expected: f64, got: f64 },

    #[error("time {t} outside the sampled horizon [{start}, {end}] or off the sample grid")]
    OutOfHorizon { t: f64, start: f64, end: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },

    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotUnitVector { .. } => "not_unit_vector",
            Error::NotARotation { .. } => "not_a_rotation",
            Error::Degenerate(_) => "degenerate_input",
            Error::BearingUndefined { .. } => "bearing_undefined",
            Error::ReconstructionDegenerate { .. } => "reconstruction_degenerate",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::TimeMismatch { .. } => "time_mismatch",
            Error::OutOfHorizon { .. } => "out_of_horizon",
            Error::Dimension { .. } => "dimension_mismatch",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            message: message.into(),
        }
    }
}
