//! Explicit a priori constants, the comparison supersolution, the small
//! solution floor and positivity classification of computed states.

use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{reduced_principal, Side};
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, BandCholesky};
use crate::mesh::{Bc, Grid};
use crate::nonlin::{FFamily, NonlinSpec};
use crate::nsolve::{deflated_solve, newton_solve, standard_seeds, Ctx, SolveOptions};
use crate::weights::{check_ab_posi, Ball, WeightField};

const LADDER_LO: i32 = -200;
const LADDER_HI: i32 = 200;
const BISECT_REL: f64 = 1e-10;

fn ladder(k: i32) -> f64 {
    2f64.powi(k)
}

/// Bisects `[lo, hi]` where `holds(lo) != holds(hi)` down to `1e-10` relative.
fn bisect(mut lo: f64, mut hi: f64, holds: impl Fn(f64) -> bool) -> (f64, f64) {
    let at_lo = holds(lo);
    while hi - lo > BISECT_REL * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid) == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// `sup` (or `inf` with `max = false`) of `f` on `(0, top]`, from a geometric
/// and a uniform sample followed by golden-section refinement.
fn extreme_on(f: impl Fn(f64) -> f64, top: f64, max: bool) -> f64 {
    let sign = if max { 1.0 } else { -1.0 };
    let mut pts: Vec<f64> = (0..=120).map(|k| top * ladder(-k)).collect();
    pts.extend((1..=4000).map(|i| top * i as f64 / 4000.0));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &s) in pts.iter().enumerate() {
        let v = sign * f(s);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best_i > 0 && best_i + 1 < pts.len() {
        let (mut a, mut b) = (pts[best_i - 1], pts[best_i + 1]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            if sign * f(c) > sign * f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.max(sign * f(0.5 * (a + b)));
    }
    sign * best
}

#[derive(Clone, Debug, Serialize)]
pub struct SideBounds {
    pub side: Side,
    pub ball: Ball,
    pub lam_b: f64,
    pub a0: f64,
    pub b0: f64,
    pub s0: f64,
    pub k0: f64,
    pub m1: f64,
    pub b_inf: f64,
    pub lambda_bar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AprioriBounds {
    pub lambda_bar: f64,
    pub lambda_bar_neg: f64,
    pub plus: SideBounds,
    pub minus: SideBounds,
}

impl AprioriBounds {
    pub fn min_bar(&self) -> f64 {
        self.lambda_bar.min(self.lambda_bar_neg)
    }
}

/// Crossover `s0`: `g(s) >= (lam_b / b0) s` for every `s > s0`.
pub fn crossover_s0(spec: &NonlinSpec, lam_b: f64, b0: f64) -> Result<f64> {
    let c = lam_b / b0;
    let holds = |s: f64| spec.g(s) >= c * s;
    let last_fail = (LADDER_LO..=LADDER_HI).rev().find(|&k| !holds(ladder(k)));
    match last_fail {
        None => Ok(0.0),
        Some(LADDER_HI) => Err(Error::Analysis(format!("g(s)/s stays below {c:e} on the whole ladder"))),
        Some(k) => Ok(bisect(ladder(k), ladder(k + 1), holds).1),
    }
}

/// Upper bound on `lam` for positive solutions. `Side::Minus` runs the same
/// computation for `-a`, with `B'` in the role of `B`.
pub fn compute_lambda_bar(field: &WeightField, grid: &Grid, spec: &NonlinSpec, side: Side) -> Result<SideBounds> {
    let flipped;
    let field = match side {
        Side::Plus => field,
        Side::Minus => {
            flipped = field.negated_a(grid);
            &flipped
        }
    };
    let posi = check_ab_posi(field, grid);
    let w = posi
        .witness
        .ok_or_else(|| Error::Analysis(format!("positivity balls: {}", posi.violation.unwrap_or_default())))?;
    let lam_b = w.b.dirichlet_eigenvalue();
    let s0 = crossover_s0(spec, lam_b, w.b0)?;
    let k0 = if s0 > 0.0 { extreme_on(|s| (spec.g(s) / s).abs(), s0, true) } else { 0.0 };
    if !k0.is_finite() {
        return Err(Error::Analysis("sup |g(s)/s| is unbounded near 0".into()));
    }
    let m1 = if s0 > 0.0 { extreme_on(|s| spec.big_f(s) / s, s0, false) } else { spec.f0() / spec.q() };
    if !(m1 > 0.0) {
        return Err(Error::Analysis(format!("inf F(s)/s = {m1:e} on (0, s0]")));
    }
    let b_inf = field.b_inf();
    let lambda_bar = (lam_b + b_inf * k0) * (s0 + 1.0).powf(1.0 - spec.q()) / (w.a0 * m1);
    Ok(SideBounds { side, ball: w.b, lam_b, a0: w.a0, b0: w.b0, s0, k0, m1, b_inf, lambda_bar })
}

pub fn compute_apriori(field: &WeightField, grid: &Grid, spec: &NonlinSpec) -> Result<AprioriBounds> {
    let plus = compute_lambda_bar(field, grid, spec, Side::Plus)?;
    let minus = compute_lambda_bar(field, grid, spec, Side::Minus)?;
    Ok(AprioriBounds { lambda_bar: plus.lambda_bar, lambda_bar_neg: minus.lambda_bar, plus, minus })
}

#[derive(Clone, Debug, Serialize)]
pub struct FloorReport {
    pub lambda_cap: f64,
    pub c_lambda: f64,
    pub k2: f64,
    pub m0_est: f64,
    pub s1: f64,
    pub s0: f64,
    /// Closed-form `s1` when `f` is a pure power.
    pub s1_closed_form: Option<f64>,
}

/// Floor `C_Lambda = min(s0, s1)` for the sup over `B` of positive solutions
/// with `lam >= Lambda`, where `f(s)/s >= (lam_B + b_inf K2)/(Lambda a0)` on `(0, s1]`.
pub fn compute_small_solution_floor(bounds: &SideBounds, spec: &NonlinSpec, lambda_cap: f64) -> Result<FloorReport> {
    if !(lambda_cap > 0.0) {
        return Err(Error::Analysis(format!("Lambda = {lambda_cap} must be positive")));
    }
    let s0 = bounds.s0;
    let k2 = extreme_on(|s| spec.dg(s).abs(), s0, true).max(spec.dg(s0).abs());
    let m0_est = (-extreme_on(|s| spec.df(s), s0, false)).max(0.0);
    let thr = (bounds.lam_b + bounds.b_inf * k2) / (lambda_cap * bounds.a0);
    let holds = |s: f64| spec.f(s) / s >= thr;
    let first_fail = (LADDER_LO..=LADDER_HI).map(ladder).take_while(|&s| s <= s0).position(|s| !holds(s));
    let s1 = match first_fail {
        Some(0) => return Err(Error::Analysis(format!("f(s)/s >= {thr:e} fails already at s = {:e}", ladder(LADDER_LO)))),
        Some(i) => {
            let k = LADDER_LO + i as i32;
            bisect(ladder(k - 1), ladder(k), holds).0
        }
        None => s0,
    };
    let s1_closed_form = match spec.f {
        FFamily::PurePower { q } => Some((1.0 / thr).powf(1.0 / (1.0 - q))),
        _ => None,
    };
    Ok(FloorReport { lambda_cap, c_lambda: s0.min(s1), k2, m0_est, s1, s0, s1_closed_form })
}

#[derive(Clone, Debug, Serialize)]
pub struct Supersolution {
    /// `b >= 0` everywhere: the bound rests on the blow-up estimate alone.
    pub case_a: bool,
    pub d_b: Vec<usize>,
    pub w0: Vec<f64>,
    pub w_bar: Vec<f64>,
    pub w0_max: f64,
    pub delta: f64,
    pub s1: f64,
    pub c: f64,
    pub min_residual: f64,
    pub worst_node: Option<usize>,
    pub ok: bool,
}

/// `w_bar = C (w0 + 1)` with `-Delta w0 = 1` on `{b < 0}` and `w0 = 0` off it.
pub fn build_supersolution(ctx: &Ctx, lambda_cap: f64, c1: f64) -> Result<Supersolution> {
    let field = &ctx.field;
    let spec = &ctx.spec;
    let n = ctx.n();
    let d_b = field.d_b();
    if d_b.is_empty() {
        return Ok(Supersolution {
            case_a: true,
            d_b,
            w0: vec![0.0; n],
            w_bar: Vec::new(),
            w0_max: 0.0,
            delta: f64::NAN,
            s1: f64::NAN,
            c: f64::NAN,
            min_residual: f64::INFINITY,
            worst_node: None,
            ok: true,
        });
    }
    let k_dd = ctx.lap.matrix().submatrix(&d_b);
    let mass = ctx.lap.mass();
    let rhs: Vec<f64> = d_b.iter().map(|&i| mass[i]).collect();
    let w_d = BandCholesky::factor(&k_dd).map_err(|e| e.context("Poisson problem on {b < 0}"))?.solve(&rhs);
    let mut w0 = vec![0.0; n];
    for (&i, &v) in d_b.iter().zip(&w_d) {
        w0[i] = v;
    }
    let w0_max = norm_inf(&w0);
    let a_pos = field.a_pos_inf();
    let delta = 1.0 / (lambda_cap * a_pos * (w0_max + 1.0));
    let holds = |s: f64| spec.f(s) <= delta * s && spec.g(s) >= 0.0;
    let s1 = match (LADDER_LO..=LADDER_HI).rev().find(|&k| !holds(ladder(k))) {
        None => ladder(LADDER_LO),
        Some(LADDER_HI) => return Err(Error::Analysis(format!("f(s) <= {delta:e} s never holds on the ladder"))),
        Some(k) => bisect(ladder(k), ladder(k + 1), holds).1,
    };
    let c = c1.max(s1);
    let w_bar: Vec<f64> = w0.iter().map(|w| c * (w + 1.0)).collect();
    // comparison operator: A w - (Lambda a+ f(w) - b- g(w)) on {b < 0}
    let aw = ctx.lap.apply(&w_bar);
    let (mut min_residual, mut worst_node) = (f64::INFINITY, None);
    for &i in &d_b {
        let ap = field.a_vals[i].max(0.0);
        let bm = (-field.b_vals[i]).max(0.0);
        let r = aw[i] - (lambda_cap * ap * spec.f(w_bar[i]) - bm * spec.g(w_bar[i]));
        if r < min_residual {
            min_residual = r;
            worst_node = Some(i);
        }
    }
    let ok = min_residual >= -1e-10 * c.max(1.0);
    Ok(Supersolution { case_a: false, d_b, w0, w_bar, w0_max, delta, s1, c, min_residual, worst_node, ok })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityClass {
    StrictlyPositive,
    DeadCore,
    Trivial,
}

impl PositivityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PositivityClass::StrictlyPositive => "strictly_positive",
            PositivityClass::DeadCore => "dead_core",
            PositivityClass::Trivial => "trivial",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityVerdict {
    pub class: PositivityClass,
    pub min_interior: f64,
    pub hopf_margin: f64,
    pub dead_nodes: Vec<usize>,
}

pub const POS_TOL: f64 = 1e-8;

/// Inward boundary slope (Dirichlet, second order one-sided) or `min u` (Neumann).
pub fn hopf_margin(u: &[f64], grid: &Grid) -> f64 {
    match grid.bc() {
        Bc::Neumann => u.iter().copied().fold(f64::INFINITY, f64::min),
        Bc::Dirichlet => {
            let c = grid.counts();
            let h = grid.h();
            let (nx, ny) = (c[0], if grid.dim() == 2 { c[1] } else { 1 });
            let mut m = f64::INFINITY;
            let slope = |u1: f64, u2: f64, h: f64| (4.0 * u1 - u2) / (2.0 * h);
            for j in 0..ny {
                m = m.min(slope(u[grid.index(0, j)], u[grid.index(1, j)], h[0]));
                m = m.min(slope(u[grid.index(nx - 1, j)], u[grid.index(nx - 2, j)], h[0]));
            }
            if grid.dim() == 2 {
                for i in 0..nx {
                    m = m.min(slope(u[grid.index(i, 0)], u[grid.index(i, 1)], h[1]));
                    m = m.min(slope(u[grid.index(i, ny - 1)], u[grid.index(i, ny - 2)], h[1]));
                }
            }
            m
        }
    }
}

pub fn classify_positivity(u: &[f64], grid: &Grid) -> PositivityVerdict {
    classify_with(u, grid, POS_TOL)
}

pub fn classify_with(u: &[f64], grid: &Grid, pos_tol: f64) -> PositivityVerdict {
    let norm = norm_inf(u);
    let min_interior = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hopf = hopf_margin(u, grid);
    if norm <= 1e-14 {
        return PositivityVerdict { class: PositivityClass::Trivial, min_interior, hopf_margin: hopf, dead_nodes: Vec::new() };
    }
    let strict = min_interior > pos_tol * norm && hopf > pos_tol * norm / grid.min_h();
    let dead_nodes = if strict { Vec::new() } else { (0..u.len()).filter(|&i| u[i] <= pos_tol * norm).collect() };
    PositivityVerdict {
        class: if strict { PositivityClass::StrictlyPositive } else { PositivityClass::DeadCore },
        min_interior,
        hopf_margin: hopf,
        dead_nodes,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QVerdict {
    AllPositive,
    DeadCoreFound,
    NoNontrivialFound,
}

#[derive(Clone, Debug, Serialize)]
pub struct QRow {
    pub q: f64,
    pub verdict: QVerdict,
    pub lam: f64,
    pub n_solutions: usize,
    pub classes: Vec<PositivityClass>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QScan {
    pub rows: Vec<QRow>,
    /// Upper run of `q` values whose verdict is `all_positive`.
    pub positive_interval: Option<[f64; 2]>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct QScanOptions {
    pub eps_start: f64,
    pub eps_final: f64,
    pub seed: u64,
    pub solve: SolveOptions,
}

impl Default for QScanOptions {
    fn default() -> Self {
        Self { eps_start: 1e-2, eps_final: 1e-12, seed: 0x5EED, solve: SolveOptions::default() }
    }
}

/// Multi-start search for nontrivial nonnegative solutions of the purely
/// concave problem (`b = 0`) for each `q`, classified after driving `eps`
/// down to `eps_final`. Evidence only.
pub fn estimate_q_threshold(ctx: &Ctx, q_grid: &[f64], opts: &QScanOptions) -> Result<QScan> {
    if ctx.field.b_vals.iter().any(|&b| b != 0.0) {
        return Err(Error::Analysis("q scan expects b = 0".into()));
    }
    let reduced = reduced_principal(&ctx.lap, &ctx.field.a_vals).ok();
    let rows: Vec<QRow> = q_grid
        .par_iter()
        .map(|&q| {
            let spec = ctx.spec.with_q(q);
            let c = ctx.with_spec(spec);
            let (lam, phi) = match &reduced {
                Some(r) => (r.mu_plus, Some(r.phi_plus.as_slice())),
                None => (1.0, None),
            };
            let seeds = standard_seeds(c.n(), phi, opts.seed);
            let zero = vec![0.0; c.n()];
            let found = deflated_solve(&[zero], lam, opts.eps_start, &c, &seeds, &opts.solve);
            let mut classes = Vec::new();
            for sol in found {
                if sol.u.iter().any(|&v| v < -1e-9) {
                    continue;
                }
                let mut u = sol.u;
                let mut eps = opts.eps_start;
                let mut ok = true;
                while eps > opts.eps_final * 1.0000001 {
                    eps = (eps * 0.1).max(opts.eps_final);
                    match newton_solve(&u, lam, eps, &c, &opts.solve) {
                        Ok(r) => u = r.u,
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let v = classify_positivity(&u, &c.grid);
                    if v.class != PositivityClass::Trivial {
                        classes.push(v.class);
                    }
                }
            }
            let verdict = if classes.is_empty() {
                QVerdict::NoNontrivialFound
            } else if classes.contains(&PositivityClass::DeadCore) {
                QVerdict::DeadCoreFound
            } else {
                QVerdict::AllPositive
            };
            QRow { q, verdict, lam, n_solutions: classes.len(), classes }
        })
        .collect();
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.q.partial_cmp(&b.q).unwrap());
    let mut warnings = Vec::new();
    for dead in sorted.iter().filter(|r| r.verdict == QVerdict::DeadCoreFound) {
        for pos in sorted.iter().filter(|r| r.verdict == QVerdict::AllPositive && r.q < dead.q) {
            warnings.push(format!("all_positive at q = {} below dead_core_found at q = {}", pos.q, dead.q));
        }
    }
    let run: Vec<f64> = sorted.iter().rev().take_while(|r| r.verdict == QVerdict::AllPositive).map(|r| r.q).collect();
    let positive_interval = (!run.is_empty()).then(|| [*run.last().unwrap(), run[0]]);
    Ok(QScan { rows, positive_interval, warnings })
}
