//! Distributed, out-of-core nonnegative matrix factorization.

pub mod cli;
pub mod comm;
pub mod counters;
pub mod distributed;
pub mod error;
pub mod linalg;
pub mod partition;
pub mod rng;
pub mod select;
pub mod serial;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
