use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has {found} entries, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("point is not on the manifold (residual {residual:e})")]
    MembershipViolation { residual: f64 },

    #[error("direction is not tangent (residual {residual:e})")]
    NonTangentDirection { residual: f64 },

    #[error("smoothing parameter mu={mu} exceeds tube radius gamma={gamma}")]
    SmoothingOutOfTube { mu: f64, gamma: f64 },

    #[error("oracle does not expose an exact gradient")]
    MissingExactGradient,

    #[error("estimator variant {0:?} does not match the requested construction")]
    VariantMismatch(crate::estimator::EstimatorVariant),

    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid partition scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("iterate left the projection tube at round {round}, client {client:?}, step {step:?}: dist {dist:e} > gamma {gamma}")]
    TubeEscape {
        round: usize,
        client: Option<usize>,
        step: Option<usize>,
        dist: f64,
        gamma: f64,
    },

    #[error("round {round}, client {client:?}: {source}")]
    InRound {
        round: usize,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{col}: cannot parse {token:?} as a number")]
    Parse {
        path: PathBuf,
        line: usize,
        col: usize,
        token: String,
    },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    RaggedRows {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("asset {name}: {msg}")]
    Asset { name: String, msg: String },
}

impl Error {
    pub(crate) fn in_round(self, round: usize, client: Option<usize>) -> Self {
        match self {
            // already carries its own location
            e @ (Error::TubeEscape { .. } | Error::InRound { .. }) => e,
            e => Error::InRound {
                round,
                client,
                source: Box::new(e),
            },
        }
    }

    /// True for errors raised by the numerics rather than by inputs or IO.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_)
            | Error::NumericalFailure(_)
            | Error::DegenerateProjection(_)
            | Error::MembershipViolation { .. }
            | Error::NonTangentDirection { .. }
            | Error::TubeEscape { .. } => true,
            Error::InRound { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
