use crate::subsolver::SubsolveResult;

/// Errors surfaced by the library.
///
/// Dimension mismatches between tensors and vectors are treated as programmer
/// errors and panic via `assert!`; everything a caller can plausibly trigger
/// at runtime goes through this enum.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported tensor order {order}; supported orders are 1..=3")]
    UnsupportedOrder { order: usize },

    #[error("derivative order {order} exceeds the oracle's maximum order {max_order}")]
    OrderBeyondOracle { order: usize, max_order: usize },

    #[error("unknown problem `{0}`; valid names: quadratic, rosenbrock_chain, cos_sum, cubic_sep, logistic_smooth")]
    UnknownProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("finite-difference step {h} vanishes at probe coordinate {coordinate}")]
    DegenerateStep { h: f64, coordinate: usize },

    #[error("secular equation did not converge within {0} iterations")]
    SecularNoConvergence(usize),

    #[error("subproblem solver exhausted its budget of {budget} iterations")]
    SubsolveBudget {
        budget: usize,
        /// Best iterate found before giving up.
        best: Box<SubsolveResult>,
    },
}
