//! Cross-domain retrieval training with synthetic label-preserving
//! translations and pseudo-positive pairs, on a procedurally generated
//! two-domain benchmark.

pub mod autodiff;
pub mod benchmark;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod trainer;

pub use autodiff::{finite_diff_check, Graph, Tensor, Var};
pub use error::{Error, Result};
