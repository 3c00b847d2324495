use thiserror::Error;

use crate::psh::GridFunction;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice would hold {nodes} nodes, above the budget of {cap}")]
    NodeBudgetExceeded { nodes: u128, cap: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("domain `{0}` is not covered by the lattice box with the required margin")]
    DomainNotCovered(String),

    #[error("point lies outside the lattice box")]
    OutOfBox,

    #[error("interior node {node} admits no usable stencil")]
    IsolatedNode { node: usize },

    #[error("grid data does not belong to this mask")]
    MaskMismatch,

    #[error("bad domain parameters: {0}")]
    BadParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domains do not overlap")]
    EmptyIntersection,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<GridFunction>>,
    },

    #[error("linear program infeasible: {0}")]
    LpInfeasible(String),

    #[error("linear program unbounded: {0}")]
    LpUnbounded(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid probe: {0}")]
    InvalidProbe(String),

    #[error("target set E is empty")]
    EmptyE,

    #[error("function is not finite on the sublevel set")]
    UnboundedU,

    #[error("value {value} at node {node} exceeds the bound {bound}")]
    BoundViolated { node: usize, value: f64, bound: f64 },

    #[error("no feasible slope constant after {doublings} doublings (best violation {best_violation:e})")]
    NoFeasibleC { doublings: usize, best_violation: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
