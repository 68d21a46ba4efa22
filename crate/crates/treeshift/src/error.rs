//! Library-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("newick parse error at byte {position}: {message}")]
    NewickParse { position: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("tree is not ultrametric (tip times differ by more than the 1e-8 relative tolerance)")]
    NotUltrametric,

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "homoplasy: nodes {node_a} and {node_b} carry the same value {value} \
         but lie in different shift components"
    )]
    Homoplasy {
        node_a: usize,
        node_b: usize,
        value: f64,
    },

    #[error("enumeration cap {cap} exceeded; equivalence class holds {class_size} colorings")]
    EnumerationCapExceeded { cap: usize, class_size: String },

    #[error("covariance matrix numerically singular (pivot {pivot:.3e} below tolerance at row {row})")]
    SingularCovariance { row: usize, pivot: f64 },

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("root finding failed: {0}")]
    RootFindingFailure(String),

    #[error("lasso could not produce any nonzero support (response numerically zero)")]
    LassoDegenerate,

    #[error(
        "log-likelihood decreased by {drop:.3e} at EM iteration {iteration} \
         (beyond the 1e-8 monotonicity tolerance)"
    )]
    MonotonicityViolation { iteration: usize, drop: f64 },

    #[error("model/tree mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
