//! Shared fixtures for the benchmarks.

use loopbif::{build_grid, sample_weights, Bc, Ctx, NonlinSpec};

pub const SIN3: &str = "sin(3*3.141592653589793*x)";

/// One-dimensional Dirichlet problem with `a = sin(3 pi x)`, `b = 1`.
pub fn dirichlet_ctx(n: usize) -> Ctx {
    let grid = build_grid(1, n, &[(0.0, 1.0)], Bc::Dirichlet).expect("grid");
    let field = sample_weights(SIN3, "1", &grid).expect("weights");
    Ctx::new(grid, field, NonlinSpec::prototype(0.5, 2.0))
}
