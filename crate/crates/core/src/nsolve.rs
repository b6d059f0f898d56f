//! Nonlinear solves of the discrete regularized problem at fixed `(lam, eps)`.
//!
//! The unknown is the nodal vector `u`; the residual is
//! `G(u) = A u - lam a (u + eps)^(q-1) F(u) - b g(u)` nodewise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dist_inf, dot, norm_inf, BandCholesky, BandLu, BandMatrix, CsrMatrix};
use crate::mesh::{assemble_laplacian, DiscreteLaplacian, Grid};
use crate::nonlin::{NonlinSpec, RegularizedTerm};
use crate::weights::WeightField;

/// Immutable problem data shared by all solvers.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub grid: Grid,
    pub lap: DiscreteLaplacian,
    pub field: WeightField,
    pub spec: NonlinSpec,
    a_max: f64,
}

impl Ctx {
    pub fn new(grid: Grid, field: WeightField, spec: NonlinSpec) -> Self {
        let lap = assemble_laplacian(&grid);
        let a_max = lap.max_abs();
        Self { grid, lap, field, spec, a_max }
    }

    pub fn with_field(&self, field: WeightField) -> Self {
        Self { field, ..self.clone() }
    }

    pub fn with_spec(&self, spec: NonlinSpec) -> Self {
        Self { spec, ..self.clone() }
    }

    pub fn n(&self) -> usize {
        self.lap.n()
    }

    /// `max |A_ij|` of the nodewise operator.
    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn residual(&self, u: &[f64], lam: f64, eps: f64) -> Result<Vec<f64>> {
        residual(u, lam, eps, &self.lap, &self.field, &self.spec)
    }

    /// Reaction values and derivatives, guard-checked.
    pub fn reaction(&self, u: &[f64], lam: f64, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let term = RegularizedTerm::new(&self.spec, eps);
        check_guard(&term, u)?;
        let (a, b) = (&self.field.a_vals, &self.field.b_vals);
        let mut r = Vec::with_capacity(u.len());
        let mut dr = Vec::with_capacity(u.len());
        for (i, &s) in u.iter().enumerate() {
            let (v, dv) = term.both_unchecked(s);
            r.push(lam * a[i] * v + b[i] * self.spec.g(s));
            dr.push(lam * a[i] * dv + b[i] * self.spec.dg(s));
        }
        Ok((r, dr))
    }

    /// `J = A - diag(dr)` in band storage.
    pub fn jacobian(&self, dr: &[f64]) -> BandMatrix {
        let bw = self.lap.bandwidth();
        let mut j = BandMatrix::zeros(self.n(), bw, bw);
        let k = self.lap.matrix();
        let m = self.lap.mass();
        for i in 0..self.n() {
            for (c, v) in k.row(i) {
                j.add(i, c, v / m[i]);
            }
            j.add(i, i, -dr[i]);
        }
        j
    }

    pub fn factor_jacobian(&self, u: &[f64], lam: f64, eps: f64) -> Result<BandLu> {
        let (_, dr) = self.reaction(u, lam, eps)?;
        self.jacobian(&dr).lu().map_err(|_| Error::SingularJacobian { lam })
    }
}

fn check_guard(term: &RegularizedTerm, u: &[f64]) -> Result<()> {
    for &s in u {
        let ok = if term.eps > 0.0 { s > term.guard() } else { s > 0.0 || s == 0.0 };
        if !ok || !s.is_finite() {
            return Err(Error::Guard { s, bound: term.guard() });
        }
    }
    Ok(())
}

pub fn residual(
    u: &[f64],
    lam: f64,
    eps: f64,
    laplacian: &DiscreteLaplacian,
    field: &WeightField,
    spec: &NonlinSpec,
) -> Result<Vec<f64>> {
    let term = RegularizedTerm::new(spec, eps);
    check_guard(&term, u)?;
    let mut g = laplacian.apply(u);
    for (i, gi) in g.iter_mut().enumerate() {
        let s = u[i];
        *gi -= lam * field.a_vals[i] * term.value_unchecked(s) + field.b_vals[i] * spec.g(s);
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newton,
    Monotone,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub u: Vec<f64>,
    pub residual_inf: f64,
    pub converged: bool,
    pub iterations: usize,
    pub method: Method,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol_rel: 1e-10, tol_abs: 1e-12, max_iter: 60 }
    }
}

impl SolveOptions {
    /// Residual tolerance at state `u`.
    pub fn tol(&self, ctx: &Ctx, u: &[f64]) -> f64 {
        self.tol_rel * ctx.a_max() * norm_inf(u) + self.tol_abs
    }
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-10;

fn sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Largest step in `(0, 1]` keeping `u + t d` strictly inside the guard.
fn guard_step(u: &[f64], d: &[f64], eps: f64) -> f64 {
    let floor = if eps > 0.0 { -0.5 * eps } else { 0.0 };
    let mut t = 1.0_f64;
    for (&ui, &di) in u.iter().zip(d) {
        if di < 0.0 {
            // keep a sliver of distance from the guard
            let room = (ui - floor) * 0.99;
            if room + t * di <= 0.0 {
                t = t.min(room / -di);
            }
        }
    }
    t
}

/// Armijo-damped Newton iteration.
pub fn newton_solve(u0: &[f64], lam: f64, eps: f64, ctx: &Ctx, opts: &SolveOptions) -> Result<SolveResult> {
    let mut u = u0.to_vec();
    let mut g = ctx.residual(&u, lam, eps)?;
    for it in 0..=opts.max_iter {
        let r = norm_inf(&g);
        if r <= opts.tol(ctx, &u) {
            return Ok(SolveResult { u, residual_inf: r, converged: true, iterations: it, method: Method::Newton });
        }
        if it == opts.max_iter {
            return Err(Error::NoConvergence { iterations: it, residual: r });
        }
        let lu = ctx.factor_jacobian(&u, lam, eps)?;
        let mut d = lu.solve(&g);
        d.iter_mut().for_each(|x| *x = -*x);
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularJacobian { lam });
        }
        let phi0 = sq(&g);
        let mut t = guard_step(&u, &d, eps);
        loop {
            if t < MIN_STEP {
                return Err(Error::NoConvergence { iterations: it, residual: r });
            }
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Ok(gt) = ctx.residual(&trial, lam, eps) {
                if sq(&gt) <= (1.0 - 2.0 * ARMIJO_C * t) * phi0 {
                    u = trial;
                    g = gt;
                    break;
                }
            }
            t *= 0.5;
        }
    }
    unreachable!()
}

/// Squared discrete L2 distance.
fn l2_sq(ctx: &Ctx, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    ctx.grid.inner(&d, &d)
}

/// Deflation factor `prod_k (1/|u - u_k|^2 + 1)` and the gradient of its log.
fn deflation(ctx: &Ctx, u: &[f64], known: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let w = ctx.grid.cell_volume();
    let mass = ctx.grid.mass();
    let mut factor = 1.0;
    let mut grad = vec![0.0; u.len()];
    for k in known {
        let r = l2_sq(ctx, u, k).max(1e-300);
        factor *= 1.0 / r + 1.0;
        let c = -2.0 * w / (r + r * r);
        for i in 0..u.len() {
            grad[i] += c * mass[i] * (u[i] - k[i]);
        }
    }
    (factor, grad)
}

/// Newton on the deflated operator `m(u) G(u)`, started at `u0`.
pub fn deflated_newton(
    u0: &[f64],
    known: &[Vec<f64>],
    lam: f64,
    eps: f64,
    ctx: &Ctx,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let mut u = u0.to_vec();
    let mut g = ctx.residual(&u, lam, eps)?;
    for it in 0..=opts.max_iter {
        let r = norm_inf(&g);
        if r <= opts.tol(ctx, &u) {
            return Ok(SolveResult { u, residual_inf: r, converged: true, iterations: it, method: Method::Newton });
        }
        if it == opts.max_iter {
            break;
        }
        let lu = ctx.factor_jacobian(&u, lam, eps)?;
        let y = lu.solve(&g);
        let (m, w) = deflation(ctx, &u, known);
        let denom = 1.0 + dot(&w, &y);
        if !denom.is_finite() || denom.abs() < 1e-14 {
            return Err(Error::SingularJacobian { lam });
        }
        let d: Vec<f64> = y.iter().map(|v| -v / denom).collect();
        let phi0 = m * m * sq(&g);
        let mut t = guard_step(&u, &d, eps);
        loop {
            if t < MIN_STEP {
                return Err(Error::NoConvergence { iterations: it, residual: r });
            }
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Ok(gt) = ctx.residual(&trial, lam, eps) {
                let (mt, _) = deflation(ctx, &trial, known);
                if mt * mt * sq(&gt) <= (1.0 - 2.0 * ARMIJO_C * t) * phi0 {
                    u = trial;
                    g = gt;
                    break;
                }
            }
            t *= 0.5;
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: norm_inf(&g) })
}

/// Default separation `1e-6 (1 + max norm)` between distinct solutions.
pub fn default_sep_tol(sols: &[Vec<f64>]) -> f64 {
    1e-6 * (1.0 + sols.iter().map(|u| norm_inf(u)).fold(0.0, f64::max))
}

/// Runs deflated Newton from every seed, deflating both `known` and each
/// newly found solution. A seed whose deflated iteration fails is retried
/// with plain Newton, which can still land on an unseen root. Returns only
/// solutions distinct from `known`.
pub fn deflated_solve(
    known: &[Vec<f64>],
    lam: f64,
    eps: f64,
    ctx: &Ctx,
    seeds: &[Vec<f64>],
    opts: &SolveOptions,
) -> Vec<SolveResult> {
    let mut all: Vec<Vec<f64>> = known.to_vec();
    let mut found = Vec::new();
    for seed in seeds {
        let Ok(sol) = deflated_newton(seed, &all, lam, eps, ctx, opts).or_else(|_| newton_solve(seed, lam, eps, ctx, opts)) else {
            continue;
        };
        let mut pool = all.clone();
        pool.push(sol.u.clone());
        let sep = default_sep_tol(&pool);
        if all.iter().all(|k| dist_inf(k, &sol.u) > sep) {
            all.push(sol.u.clone());
            found.push(sol);
        }
    }
    found
}

/// The standard 20-seed ladder `t * {phi, 1, random positive}` with
/// `t = 10^(-2 + 6 i / 19)`.
pub fn standard_seeds(n: usize, phi: Option<&[f64]>, rng_seed: u64) -> Vec<Vec<f64>> {
    seed_ladder(n, phi, 20, rng_seed)
}

/// `count` seeds on the same ladder `t in [1e-2, 1e4]`, cycling through the
/// three kinds.
pub fn seed_ladder(n: usize, phi: Option<&[f64]>, count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let last = count.saturating_sub(1).max(1) as f64;
    (0..count)
        .map(|i| {
            let t = 10f64.powf(-2.0 + 6.0 * i as f64 / last);
            let kind = match (i % 3, phi) {
                (0, Some(_)) => 0,
                (0, None) | (1, _) => 1,
                _ => 2,
            };
            match kind {
                0 => phi.unwrap().iter().map(|p| t * p).collect(),
                1 => vec![t; n],
                _ => (0..n).map(|_| t * rng.gen_range(0.1..1.0)).collect(),
            }
        })
        .collect()
}

/// Sub/supersolution iteration `(A + M)u_{k+1} = r(u_k) + M u_k` from `sub`,
/// finished by a Newton polish.
pub fn monotone_solve(sub: &[f64], sup: &[f64], lam: f64, eps: f64, ctx: &Ctx, opts: &SolveOptions) -> Result<SolveResult> {
    let n = ctx.n();
    if let Some(node) = (0..n).find(|&i| sub[i] > sup[i]) {
        return Err(Error::Ordering { node });
    }
    let g_sub = ctx.residual(sub, lam, eps)?;
    let g_sup = ctx.residual(sup, lam, eps)?;
    let tol = opts.tol(ctx, sup);
    if let Some(node) = (0..n).find(|&i| g_sub[i] > tol) {
        return Err(Error::BracketResidual { which: "sub", node, residual: g_sub[node] });
    }
    if let Some(node) = (0..n).find(|&i| g_sup[i] < -tol) {
        return Err(Error::BracketResidual { which: "sup", node, residual: g_sup[node] });
    }
    if dist_inf(sub, sup) == 0.0 {
        return Ok(SolveResult {
            u: sub.to_vec(),
            residual_inf: norm_inf(&g_sub),
            converged: true,
            iterations: 0,
            method: Method::Monotone,
        });
    }

    let mut shift = slope_bound(ctx, sub, sup, lam, eps);
    let mass = ctx.lap.mass();
    for _ in 0..=5 {
        match monotone_iterate(ctx, sub, sup, lam, eps, shift, mass, opts) {
            Ok(res) => return Ok(res),
            Err(Error::NonMonotone(_)) => shift *= 2.0,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonMonotone(format!("still not order preserving with M = {shift:e}")))
}

/// `max(1.1 * max(-dr), 1)` sampled on `[min sub, max sup]` at every node.
fn slope_bound(ctx: &Ctx, sub: &[f64], sup: &[f64], lam: f64, eps: f64) -> f64 {
    let term = RegularizedTerm::new(&ctx.spec, eps);
    let lo = sub.iter().copied().fold(f64::INFINITY, f64::min).max(if eps > 0.0 { -0.25 * eps } else { 0.0 });
    let hi = sup.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = (&ctx.field.a_vals, &ctx.field.b_vals);
    let mut worst = 0.0_f64;
    for k in 0..=64 {
        let mut s = lo + (hi - lo) * k as f64 / 64.0;
        if eps == 0.0 && s <= 0.0 {
            s = 1e-3 * (hi - lo).max(1e-12);
        }
        let (_, dv) = term.both_unchecked(s);
        let dg = ctx.spec.dg(s);
        for i in 0..a.len() {
            worst = worst.max(-(lam * a[i] * dv + b[i] * dg));
        }
    }
    (1.1 * worst).max(1.0)
}

#[allow(clippy::too_many_arguments)]
fn monotone_iterate(
    ctx: &Ctx,
    sub: &[f64],
    sup: &[f64],
    lam: f64,
    eps: f64,
    shift: f64,
    mass: &[f64],
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let n = ctx.n();
    let k = ctx.lap.matrix();
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(k.nnz() + n);
    for i in 0..n {
        t.extend(k.row(i).map(|(j, v)| (i, j, v)));
        t.push((i, i, shift * mass[i]));
    }
    let chol = BandCholesky::factor(&CsrMatrix::from_triplets(n, t))?;
    let slack = 1e-12 * (1.0 + norm_inf(sup));
    let mut u = sub.to_vec();
    let mut iterations = 0;
    for it in 1..=20_000 {
        iterations = it;
        let (r, _) = ctx.reaction(&u, lam, eps)?;
        let rhs: Vec<f64> = (0..n).map(|i| mass[i] * (r[i] + shift * u[i])).collect();
        let next = chol.solve(&rhs);
        if let Some(i) = (0..n).find(|&i| next[i] < u[i] - slack || next[i] > sup[i] + slack) {
            return Err(Error::NonMonotone(format!("node {i} left the bracket at iterate {it}")));
        }
        let step = dist_inf(&next, &u);
        u = next;
        if step <= 1e-13 * (1.0 + norm_inf(&u)) {
            break;
        }
        if it % 50 == 0 && norm_inf(&ctx.residual(&u, lam, eps)?) <= 1e3 * opts.tol(ctx, &u) {
            break;
        }
    }
    // Newton polish; keep the monotone iterate if polishing leaves the bracket.
    if let Ok(p) = newton_solve(&u, lam, eps, ctx, opts) {
        let inside = (0..n).all(|i| p.u[i] >= sub[i] - 1e-8 * (1.0 + norm_inf(sup)) && p.u[i] <= sup[i] + 1e-8 * (1.0 + norm_inf(sup)));
        if inside {
            return Ok(SolveResult { iterations: iterations + p.iterations, method: Method::Monotone, ..p });
        }
    }
    let res = norm_inf(&ctx.residual(&u, lam, eps)?);
    Ok(SolveResult { converged: res <= opts.tol(ctx, &u), residual_inf: res, u, iterations, method: Method::Monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Bc};
    use crate::weights::sample_weights;

    fn ctx(a: &str, b: &str, n: usize, bc: Bc, q: f64) -> Ctx {
        let grid = build_grid(1, n, &[(0.0, 1.0)], bc).unwrap();
        let field = sample_weights(a, b, &grid).unwrap();
        Ctx::new(grid, field, NonlinSpec::prototype(q, 2.0))
    }

    #[test]
    fn zero_is_an_exact_root() {
        let c = ctx("sin(3*3.141592653589793*x)", "1", 40, Bc::Dirichlet, 0.5);
        let r = newton_solve(&vec![0.0; c.n()], 123.0, 1e-2, &c, &SolveOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual_inf, 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = ctx("sin(3*3.141592653589793*x)", "cos(x)", 30, Bc::Neumann, 0.5);
        let n = c.n();
        let u: Vec<f64> = (0..n).map(|i| 0.3 + 0.2 * (i as f64).sin()).collect();
        let (lam, eps) = (7.0, 1e-2);
        let (_, dr) = c.reaction(&u, lam, eps).unwrap();
        let j = c.jacobian(&dr);
        let dir: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let g0 = c.residual(&u, lam, eps).unwrap();
        let jd = j.matvec(&dir);
        let err = |h: f64| {
            let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let g1 = c.residual(&up, lam, eps).unwrap();
            (0..n).map(|i| (g1[i] - g0[i] - h * jd[i]).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn monotone_degenerate_and_ordering() {
        let c = ctx("sin(3*3.141592653589793*x)", "0", 20, Bc::Dirichlet, 0.5);
        let z = vec![0.0; c.n()];
        let r = monotone_solve(&z, &z, 10.0, 1e-2, &c, &SolveOptions::default()).unwrap();
        assert!(r.u.iter().all(|&v| v == 0.0));
        let mut sup = vec![1.0; c.n()];
        sup[3] = -1.0;
        assert!(matches!(monotone_solve(&z, &sup, 10.0, 1e-2, &c, &SolveOptions::default()), Err(Error::Ordering { node: 3 })));
    }

    #[test]
    fn seeds_are_positive_and_twenty() {
        let s = standard_seeds(7, Some(&[1.0; 7]), 3);
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|v| v.iter().all(|&x| x > 0.0)));
    }
}
