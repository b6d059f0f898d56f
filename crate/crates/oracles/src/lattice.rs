//! Multi-start Newton from every point of a lattice in `[0, u_cap]^n`.

use nalgebra::DVector;
use rayon::prelude::*;

use loopbif::linalg::{dist_inf, norm_inf};
use loopbif::Ctx;

pub const MAX_UNKNOWNS: usize = 6;
const STEPS_PER_AXIS: usize = 8;

/// Plain damped Newton with a dense LU; returns the root if the residual
/// drops below `1e-10 |A|_max |u|_inf + 1e-12`.
fn dense_newton(ctx: &Ctx, lam: f64, eps: f64, mut u: Vec<f64>) -> Option<Vec<f64>> {
    let n = u.len();
    let op = ctx.lap.operator().to_dense();
    let tol = |u: &[f64]| 1e-10 * ctx.a_max() * norm_inf(u) + 1e-12;
    let mut g = ctx.residual(&u, lam, eps).ok()?;
    for _ in 0..80 {
        if norm_inf(&g) <= tol(&u) {
            return Some(u);
        }
        let (_, dr) = ctx.reaction(&u, lam, eps).ok()?;
        let mut j = op.clone();
        for i in 0..n {
            j[(i, i)] -= dr[i];
        }
        let d = j.lu().solve(&DVector::from_column_slice(&g))?;
        let g2: f64 = g.iter().map(|x| x * x).sum();
        let mut t = 1.0;
        loop {
            if t < 1e-8 {
                return None;
            }
            let trial: Vec<f64> = (0..n).map(|i| u[i] - t * d[i]).collect();
            if let Ok(gt) = ctx.residual(&trial, lam, eps) {
                if gt.iter().map(|x| x * x).sum::<f64>() < (1.0 - 1e-4 * t) * g2 {
                    u = trial;
                    g = gt;
                    break;
                }
            }
            t *= 0.5;
        }
    }
    None
}

/// Distinct solutions (up to `sep_tol` in the sup norm) reached from the
/// lattice `{0, u_cap/8, ..., u_cap}^n`, sorted by sup norm.
pub fn exhaustive_small_solutions(ctx: &Ctx, lam: f64, eps: f64, u_cap: f64, sep_tol: f64) -> Vec<Vec<f64>> {
    let n = ctx.n();
    assert!(n <= MAX_UNKNOWNS, "lattice oracle limited to {MAX_UNKNOWNS} unknowns, got {n}");
    let per = STEPS_PER_AXIS + 1;
    let total = per.pow(n as u32);
    let pitch = u_cap / STEPS_PER_AXIS as f64;
    let roots: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .filter_map(|mut code| {
            let mut u0 = vec![0.0; n];
            for x in u0.iter_mut() {
                *x = (code % per) as f64 * pitch;
                code /= per;
            }
            dense_newton(ctx, lam, eps, u0)
        })
        .collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in roots {
        if out.iter().all(|k| dist_inf(k, &r) > sep_tol) {
            out.push(r);
        }
    }
    out.sort_by(|a, b| norm_inf(a).partial_cmp(&norm_inf(b)).unwrap());
    out
}
