//! Regularized bifurcation continuation for indefinite concave-convex
//! elliptic problems on boxes.

pub mod continuation;
pub mod eigen;
pub mod analysis;
pub mod error;
pub mod expr;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod nonlin;
pub mod nsolve;
pub mod weights;

pub use error::{Error, Result};
pub use mesh::{assemble_laplacian, build_grid, Bc, DiscreteLaplacian, Grid};
pub use nsolve::{Ctx, SolveOptions, SolveResult};
pub use nonlin::{FFamily, FShape, GFamily, GShape, NonlinSpec, RegularizedTerm};
pub use weights::{sample_weights, Ball, HbData, PosBalls, WeightField};
