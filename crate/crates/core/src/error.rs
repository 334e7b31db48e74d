use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: only 1 and 2 are supported")]
    InvalidDimension(usize),

    #[error("points per axis must be even and at least 8, got {0}")]
    InvalidPointCount(usize),

    #[error("box extent must be positive, got {0}")]
    NonPositiveExtent(f64),

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("radius {radius} outside (0, {max}]")]
    RadiusOutOfRange { radius: f64, max: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("ball family has no radii")]
    EmptyRadii,

    #[error("box extent {extent} too small, need at least {required}")]
    BoxTooSmall { extent: f64, required: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("exponent overflow: 1/z = {inv_z} exceeds 1")]
    ExponentOverflow { inv_z: f64 },

    #[error("potential not admissible: kappa = {kappa} must be < 1")]
    Inadmissible { kappa: f64 },

    #[error("scheme/potential mismatch: {0}")]
    SchemeMismatch(String),

    #[error("blow-up at t = {t}: sup norm grew by a factor {ratio:e}")]
    BlowUp { t: f64, ratio: f64 },

    #[error("Picard map did not contract after {halvings} window halvings (factor {factor})")]
    NonContraction { factor: f64, halvings: usize },

    #[error("Picard iteration did not converge in {iterations} iterations (update {update:e})")]
    PicardNotConverged { iterations: usize, update: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("unreliable fit: {0}")]
    UnreliableFit(String),

    #[error("nonpositive norm sample {value} at index {index}")]
    NonPositiveSample { index: usize, value: f64 },

    #[error("decay certificate unavailable: inf psi = {inf_psi:e}")]
    CertificateUnavailable { inf_psi: f64 },

    #[error("eigen iteration stagnated after {iterations} iterations (residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("series did not converge within {terms} terms")]
    SeriesNotConverged { terms: usize },

    #[error("time {t} exceeds the box validity window t <= {limit}")]
    ValidityWindow { t: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }

    /// Validation errors are caller mistakes; everything else is a numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Quadrature { .. }
                | Error::BlowUp { .. }
                | Error::NonContraction { .. }
                | Error::PicardNotConverged { .. }
                | Error::DegenerateFit(_)
                | Error::UnreliableFit(_)
                | Error::CertificateUnavailable { .. }
                | Error::Stagnation { .. }
                | Error::SeriesNotConverged { .. }
                | Error::Io(_)
        )
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid-dimension",
            Error::InvalidPointCount(_) => "odd-n",
            Error::NonPositiveExtent(_) => "non-positive-extent",
            Error::NonFinite { .. } => "non-finite",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::GridMismatch => "grid-mismatch",
            Error::RadiusOutOfRange { .. } => "radius-out-of-range",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Quadrature { .. } => "quadrature",
            Error::EmptyRadii => "empty-radii",
            Error::BoxTooSmall { .. } => "box-too-small",
            Error::Hypothesis(_) => "hypothesis-violation",
            Error::ExponentOverflow { .. } => "exponent-overflow",
            Error::Inadmissible { .. } => "admissibility-violation",
            Error::SchemeMismatch(_) => "scheme-mismatch",
            Error::BlowUp { .. } => "blow-up",
            Error::NonContraction { .. } => "non-contraction",
            Error::PicardNotConverged { .. } => "picard-non-convergence",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::UnreliableFit(_) => "unreliable-fit",
            Error::NonPositiveSample { .. } => "nonpositive-sample",
            Error::CertificateUnavailable { .. } => "certificate-unavailable",
            Error::Stagnation { .. } => "stagnation",
            Error::SeriesNotConverged { .. } => "series-non-convergence",
            Error::ValidityWindow { .. } => "validity-window",
            Error::Io(_) => "io",
            Error::Json(_) => "malformed-json",
        }
    }
}
