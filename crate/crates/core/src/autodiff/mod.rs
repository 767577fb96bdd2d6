//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{entropy, logsumexp, Graph, Var, EPSILON_NORM, PROB_SUM_TOL};
pub use tensor::{dot, norm, normalized, Tensor};
