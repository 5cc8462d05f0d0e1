//! Compact formal proofs of accuracy for a one-layer attention-only transformer
//! trained to return the maximum of a token sequence.
//!
//! The crate trains models ([`trainer`]), decomposes them into path matrices
//! ([`model`]), and certifies lower bounds on accuracy with three verifiers of
//! decreasing cost: exhaustive enumeration ([`certify::brute`]), a cubic
//! verifier over pure sequences ([`certify::cubic`]) and a family of subcubic
//! verifiers built on a gap table and low-rank bounds ([`certify::subcubic`],
//! [`tricks`]).

pub mod certify;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod report;
pub mod tensor;
pub mod trainer;
pub mod tricks;

#[doc(hidden)]
pub mod test_support;

pub use error::{Error, Result};
