// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod kernel;
pub mod krr;
pub mod linalg;
pub mod oracles;
pub mod poly;
pub mod rng;
pub mod sampler;
pub mod sketch;
pub mod sparse;
pub mod taylor;
mod walk;

pub use error::{Error, Result};
