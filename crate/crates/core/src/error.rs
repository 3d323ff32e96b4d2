use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("quadrature did not converge: residual estimate {residual:.3e} above tolerance {tol:.3e}")]
    QuadratureNonConvergent { residual: f64, tol: f64 },

    #[error("Q-matrix is reducible: types {a} and {b} do not communicate")]
    ReducibleQMatrix { a: usize, b: usize },

    #[error("invalid Q-matrix: {0}")]
    InvalidQMatrix(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("step budget {budget} exceeded; chain still at state ({pos}, {ty})")]
    RunawayChain { budget: u64, pos: u64, ty: u32 },

    #[error("event budget {0} exceeded in MAP simulation")]
    RunawayMap(u64),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid MAP characteristics: {0}")]
    InvalidCharacteristics(String),

    #[error("degenerate Laplace exponent: psi({q}) = 0")]
    DegenerateExponent { q: f64 },

    #[error("row at position {pos} has {size} entries, above the enumeration budget {budget}; use sampled estimation instead")]
    RowBudget { pos: u64, size: u64, budget: u64 },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("degenerate observation window: path starts at or below the stopping level {eps}")]
    DegenerateWindow { eps: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
