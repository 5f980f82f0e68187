use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis is rank deficient: numerical rank {rank}, expected {expected}")]
    SingularBasis { rank: usize, expected: usize },

    #[error("leading block L of the partitioned matrix is singular")]
    SingularLeadingBlock,

    #[error("Schur complement N = H - G L^-1 M is singular")]
    SingularSchurComplement,

    #[error("matrix {what} is singular or not positive definite")]
    Singular { what: String },

    #[error("parameter not identifiable: {factor} has rank {rank}, expected {expected}")]
    Identifiability {
        factor: String,
        rank: usize,
        expected: usize,
    },

    #[error(
        "log-linear fit did not converge after {iterations} iterations \
         (max gradient {max_gradient:.3e}, smallest fitted cell {min_fitted:.3e} at ({min_row},{min_col}))"
    )]
    NonConvergence {
        iterations: usize,
        max_gradient: f64,
        min_fitted: f64,
        min_row: usize,
        min_col: usize,
    },

    #[error("iterative proportional fitting did not converge after {sweeps} sweeps (marginal discrepancy {discrepancy:.3e})")]
    IpfNonConvergence { sweeps: usize, discrepancy: f64 },

    #[error("covariance route `{route}` failed: {source}")]
    Route {
        route: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("covariance representations disagree: max relative deviation {deviation:.3e} exceeds {tolerance:.3e}")]
    RepresentationMismatch { deviation: f64, tolerance: f64 },

    #[error("power {target} is unreachable: {reason}")]
    UnreachablePower { target: f64, reason: String },

    #[error("all {replications} Monte Carlo replicates failed")]
    AllReplicatesFailed { replications: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn route(route: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Route {
            route,
            source: Box::new(source),
        }
    }

    pub(crate) fn singular(what: impl Into<String>) -> Error {
        Error::Singular { what: what.into() }
    }
}
