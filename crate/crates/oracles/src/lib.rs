//! Brute-force references for the test suites. Nothing here is used by the
//! library itself.

pub mod dense;
pub mod lattice;

pub use dense::{dense_weighted_eig, DenseEigResult};
pub use lattice::exhaustive_small_solutions;
