//! Pseudo-arclength continuation of the bounded component bifurcating from
//! the principal eigenvalues, its closure at the opposite eigenvalue, and the
//! small-`eps` limit of the resulting family.

use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{reduced_principal, PrincipalPair, ReducedPair, Side};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf};
use crate::nonlin::RegularizedTerm;
use crate::nsolve::{Ctx, SolveOptions};

#[derive(Clone, Debug, Serialize)]
pub struct BranchPoint {
    pub lam: f64,
    pub eps: f64,
    #[serde(skip)]
    pub u: Vec<f64>,
    pub s_arc: f64,
    pub norm_inf: f64,
    pub norm_h1: f64,
    pub min_u: f64,
    pub residual_inf: f64,
    pub turning: bool,
}

impl BranchPoint {
    pub fn new(ctx: &Ctx, lam: f64, eps: f64, u: Vec<f64>, residual_inf: f64) -> Self {
        let ku = ctx.lap.matrix().matvec(&u);
        let grad = dot(&u, &ku) * ctx.grid.cell_volume();
        let norm_h1 = (ctx.grid.inner(&u, &u) + grad.max(0.0)).sqrt();
        let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
        Self { lam, eps, norm_inf: norm_inf(&u), norm_h1, min_u, residual_inf, u, s_arc: 0.0, turning: false }
    }

    /// Trivial point `(lam, 0)`.
    pub fn trivial(ctx: &Ctx, lam: f64, eps: f64) -> Self {
        Self::new(ctx, lam, eps, vec![0.0; ctx.n()], 0.0)
    }

    pub fn projection(&self) -> (f64, f64) {
        (self.lam, self.norm_inf)
    }
}

/// Product metric `|dlam| + |du|_inf`.
pub fn product_distance(a: &BranchPoint, b: &BranchPoint) -> f64 {
    (a.lam - b.lam).abs() + a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BifTag {
    LamPlus,
    LamMinus,
    None,
}

impl From<Side> for BifTag {
    fn from(s: Side) -> Self {
        match s {
            Side::Plus => BifTag::LamPlus,
            Side::Minus => BifTag::LamMinus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Closed,
    MaxSteps,
    BoxExit,
    Stall,
    ReturnedToTrivial,
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub start_bif: BifTag,
    pub end_bif: BifTag,
    pub closed_mushroom: bool,
    pub stop: StopReason,
    pub anomalies: Vec<String>,
    pub eps: f64,
}

impl Branch {
    pub fn projection(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(BranchPoint::projection).collect()
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.lam), hi.max(p.lam)))
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm_inf).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContOptions {
    pub ds0: f64,
    pub ds_max: f64,
    /// Defaults to `ds0 * 1e-4`.
    pub ds_min: Option<f64>,
    pub max_steps: usize,
    /// Largest admissible chord sagitta in the `(lam, |u|_inf)` plane.
    pub chord_tol: f64,
    pub tol_neg: f64,
    /// Stop box `|lam| <= lam_box`, usually `1.5 * lambda_bar`.
    pub lam_box: Option<f64>,
    pub norm_cap: Option<f64>,
    #[serde(skip)]
    pub solve: SolveOptions,
    pub max_corrector: usize,
}

impl Default for ContOptions {
    fn default() -> Self {
        Self {
            ds0: 1e-2,
            ds_max: 0.5,
            ds_min: None,
            max_steps: 20_000,
            chord_tol: 1e-4,
            tol_neg: 1e-9,
            lam_box: None,
            norm_cap: None,
            solve: SolveOptions::default(),
            max_corrector: 10,
        }
    }
}

impl ContOptions {
    fn ds_min(&self) -> f64 {
        self.ds_min.unwrap_or(self.ds0 * 1e-4)
    }
}

/// Hyperplane `<t_u, u>_W + t_lam lam = c`.
struct Border {
    tw: Vec<f64>,
    t_lam: f64,
    c: f64,
}

impl Border {
    fn new(ctx: &Ctx, t_u: &[f64], t_lam: f64, c: f64) -> Self {
        let w = ctx.grid.cell_volume();
        let tw = t_u.iter().zip(ctx.grid.mass()).map(|(t, m)| t * m * w).collect();
        Self { tw, t_lam, c }
    }

    fn eval(&self, u: &[f64], lam: f64) -> f64 {
        dot(&self.tw, u) + self.t_lam * lam - self.c
    }
}

/// `dG/dlam = -a (u + eps)^(q-1) F(u)`.
fn g_lambda(ctx: &Ctx, u: &[f64], eps: f64) -> Vec<f64> {
    let term = RegularizedTerm::new(&ctx.spec, eps);
    u.iter().zip(&ctx.field.a_vals).map(|(&s, &a)| -a * term.value_unchecked(s)).collect()
}

/// Newton on `G(u, lam) = 0` plus one border row, by block elimination
/// with one refinement sweep.
fn bordered_newton(
    ctx: &Ctx,
    eps: f64,
    mut u: Vec<f64>,
    mut lam: f64,
    border: &Border,
    opts: &ContOptions,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    let n = ctx.n();
    let floor = -0.5 * eps;
    let mut last = f64::INFINITY;
    for it in 0..=opts.max_corrector {
        let g = ctx.residual(&u, lam, eps)?;
        let nres = border.eval(&u, lam);
        let r = norm_inf(&g);
        let scale = border.tw.iter().map(|x| x.abs()).sum::<f64>() * (1.0 + norm_inf(&u)) + border.t_lam.abs() * (1.0 + lam.abs());
        if r <= opts.solve.tol(ctx, &u) && nres.abs() <= 1e-12 * scale {
            return Ok((u, lam, r, it));
        }
        if it == opts.max_corrector || (it >= 3 && r > 2.0 * last) {
            return Err(Error::Corrector(format!("residual {r:e} after {it} corrector steps")));
        }
        last = r;
        let lu = ctx.factor_jacobian(&u, lam, eps)?;
        let gl = g_lambda(ctx, &u, eps);
        let y2 = lu.solve(&gl);
        let solve = |rg: &[f64], rn: f64| -> (Vec<f64>, f64) {
            let y1 = lu.solve(rg);
            let den = border.t_lam - dot(&border.tw, &y2);
            let dl = (-rn + dot(&border.tw, &y1)) / den;
            ((0..n).map(|i| -y1[i] - dl * y2[i]).collect(), dl)
        };
        let (mut du, mut dl) = solve(&g, nres);
        // refinement against the full bordered residual
        let (_, dr) = ctx.reaction(&u, lam, eps)?;
        let jd = ctx.jacobian(&dr).matvec(&du);
        let r1: Vec<f64> = (0..n).map(|i| jd[i] + gl[i] * dl + g[i]).collect();
        let r2 = dot(&border.tw, &du) + border.t_lam * dl + nres;
        let (cu, cl) = solve(&r1, r2);
        for i in 0..n {
            du[i] += cu[i];
        }
        dl += cl;
        if !dl.is_finite() || du.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularJacobian { lam });
        }
        // stay inside the guard by shortening, never by projecting
        let mut t = 1.0_f64;
        for i in 0..n {
            if du[i] < 0.0 {
                let room = (u[i] - floor) * 0.99;
                if room + t * du[i] <= 0.0 {
                    t = t.min(room / -du[i]);
                }
            }
        }
        for i in 0..n {
            u[i] += t * du[i];
        }
        lam += t * dl;
    }
    unreachable!()
}

/// First nontrivial point off `(lam_side, 0)` with `<phi, u> = ds0 <phi, phi>`.
pub fn branch_start(pair: &PrincipalPair, side: Side, ds0: f64, ctx: &Ctx, opts: &ContOptions) -> Result<BranchPoint> {
    let eps = pair.eps;
    let phi = pair.phi(side);
    let lam0 = pair.lam(side);
    let phi_sq = ctx.grid.inner(phi, phi);
    let mut amp = ds0;
    let mut last_err = None;
    for _ in 0..=10 {
        let border = Border::new(ctx, phi, 0.0, amp * phi_sq);
        let u0: Vec<f64> = phi.iter().map(|p| amp * p).collect();
        match bordered_newton(ctx, eps, u0, lam0, &border, opts) {
            Ok((u, lam, res, _)) => {
                let p = BranchPoint::new(ctx, lam, eps, u, res);
                let d = (p.lam - lam0).abs() + p.norm_inf;
                if p.min_u >= -opts.tol_neg && d <= opts.ds_max && p.norm_inf > 0.1 * amp {
                    return Ok(p);
                }
                last_err = Some(Error::Corrector(format!(
                    "start point at amplitude {amp:e} rejected (min u {:e}, distance {d:e})",
                    p.min_u
                )));
            }
            Err(e) => last_err = Some(e),
        }
        amp *= 0.5;
    }
    Err(last_err.unwrap().context("branch start"))
}

/// Sagitta estimate of the chord error at `b` between segments `ab` and `bc`.
fn sagitta(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (u, v) = ((b.0 - a.0, b.1 - a.1), (c.0 - b.0, c.1 - b.1));
    let (lu, lv) = (u.0.hypot(u.1), v.0.hypot(v.1));
    if lu == 0.0 || lv == 0.0 {
        return 0.0;
    }
    let cos = ((u.0 * v.0 + u.1 * v.1) / (lu * lv)).clamp(-1.0, 1.0);
    cos.acos() * lu.max(lv) / 8.0
}

/// Traces the component from `start` until it closes at the opposite
/// bifurcation point, leaves the a priori box, stalls or runs out of steps.
pub fn continue_branch(start: BranchPoint, side: Side, pair: &PrincipalPair, ctx: &Ctx, opts: &ContOptions) -> Branch {
    let eps = pair.eps;
    let other = side.other();
    let lam_other = pair.lam(other);
    let mut points = vec![BranchPoint::trivial(ctx, pair.lam(side), eps)];
    let mut start = start;
    start.s_arc = product_distance(&points[0], &start);
    points.push(start);
    let mut branch = Branch {
        points: Vec::new(),
        start_bif: side.into(),
        end_bif: BifTag::None,
        closed_mushroom: false,
        stop: StopReason::MaxSteps,
        anomalies: Vec::new(),
        eps,
    };
    let ds_min = opts.ds_min();
    let mut ds = opts.ds0.min(opts.ds_max);
    let w = ctx.grid.cell_volume();
    let mass = ctx.grid.mass();
    let wnorm = |du: &[f64], dl: f64| (w * du.iter().zip(mass).map(|(x, m)| m * x * x).sum::<f64>() + dl * dl).sqrt();

    for _step in 0..opts.max_steps {
        let k = points.len();
        let (prev, cur) = (&points[k - 2], &points[k - 1]);
        let du: Vec<f64> = cur.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        let dl = cur.lam - prev.lam;
        let nt = wnorm(&du, dl);
        let t_u: Vec<f64> = du.iter().map(|x| x / nt).collect();
        let t_l = dl / nt;

        let dist_other = (cur.lam - lam_other).abs() + cur.norm_inf;
        if k > 2 && dist_other < 4.0 * ds {
            ds = (0.5 * dist_other).max(ds_min);
        }

        let u_pred: Vec<f64> = cur.u.iter().zip(&t_u).map(|(a, t)| a + ds * t).collect();
        let l_pred = cur.lam + ds * t_l;
        let border = Border::new(ctx, &t_u, t_l, 0.0);
        let border = Border { c: dot(&border.tw, &u_pred) + t_l * l_pred, ..border };
        let outcome = bordered_newton(ctx, eps, u_pred, l_pred, &border, opts);

        let reject = |ds: &mut f64, why: String, branch: &mut Branch| -> bool {
            if *ds <= ds_min * 1.000001 {
                branch.anomalies.push(format!("corrector stall at lambda = {}: {why}", cur.lam));
                branch.stop = StopReason::Stall;
                return true;
            }
            *ds = (*ds * 0.5).max(ds_min);
            false
        };

        let (u, lam, res, iters) = match outcome {
            Ok(v) => v,
            Err(e) => {
                if reject(&mut ds, e.to_string(), &mut branch) {
                    break;
                }
                continue;
            }
        };
        let mut p = BranchPoint::new(ctx, lam, eps, u, res);
        if p.min_u < -opts.tol_neg {
            if reject(&mut ds, format!("negative state {:e}", p.min_u), &mut branch) {
                break;
            }
            continue;
        }
        let step = product_distance(cur, &p);
        if step > opts.ds_max {
            if reject(&mut ds, format!("step {step:e} above ds_max"), &mut branch) {
                break;
            }
            continue;
        }
        let sag = sagitta(prev.projection(), cur.projection(), p.projection());
        if k > 2 && sag > opts.chord_tol && ds > ds_min * 1.000001 {
            ds = (ds * 0.5).max(ds_min);
            continue;
        }
        p.s_arc = cur.s_arc + step;
        let dist_other = (p.lam - lam_other).abs() + p.norm_inf;
        // the corrector hyperplane also cuts the trivial line
        if dist_other >= opts.ds0 && p.norm_inf < 0.05 * cur.norm_inf {
            if reject(&mut ds, format!("collapsed onto u = 0 at lambda = {}", p.lam), &mut branch) {
                branch.stop = StopReason::ReturnedToTrivial;
                break;
            }
            continue;
        }
        let turning = (cur.lam - prev.lam) * (p.lam - cur.lam) < 0.0;
        points[k - 1].turning = turning;
        let outside = opts.lam_box.is_some_and(|b| p.lam.abs() > b) || opts.norm_cap.is_some_and(|c| p.norm_inf > c);
        points.push(p);
        if outside {
            branch.anomalies.push(format!("left the a priori box at lambda = {lam}"));
            branch.stop = StopReason::BoxExit;
            break;
        }
        if dist_other < opts.ds0 {
            let mut end = BranchPoint::trivial(ctx, lam_other, eps);
            let last = points.last().unwrap();
            end.s_arc = last.s_arc + product_distance(last, &end);
            points.push(end);
            branch.closed_mushroom = true;
            branch.end_bif = other.into();
            branch.stop = StopReason::Closed;
            break;
        }
        if iters <= 3 && sag < 0.25 * opts.chord_tol {
            ds = (ds * 1.5).min(opts.ds_max);
        } else if iters >= 6 {
            ds = (ds * 0.7).max(ds_min);
        }
    }
    branch.points = points;
    branch
}

/// `branch_start` followed by `continue_branch`.
pub fn trace(pair: &PrincipalPair, side: Side, ctx: &Ctx, opts: &ContOptions) -> Result<Branch> {
    let start = branch_start(pair, side, opts.ds0, ctx, opts)?;
    Ok(continue_branch(start, side, pair, ctx, opts))
}

/// L1 distance from `p` to the segment `ab`.
fn point_segment_l1(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = (b.0 - a.0, b.1 - a.1);
    let at = |t: f64| (p.0 - a.0 - t * d.0).abs() + (p.1 - a.1 - t * d.1).abs();
    let mut best = at(0.0).min(at(1.0));
    for (pc, ac, dc) in [(p.0, a.0, d.0), (p.1, a.1, d.1)] {
        if dc != 0.0 {
            let t = (pc - ac) / dc;
            if (0.0..=1.0).contains(&t) {
                best = best.min(at(t));
            }
        }
    }
    best
}

fn point_polyline(p: (f64, f64), line: &[(f64, f64)]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => (p.0 - line[0].0).abs() + (p.1 - line[0].1).abs(),
        _ => line.windows(2).map(|w| point_segment_l1(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Hausdorff distance between polylines in the `(lam, |u|_inf)` plane with
/// the L1 product metric; vertices are compared against whole segments.
pub fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// Largest distance from a vertex of `a` to the polyline `b`, with that vertex.
pub fn directed_hausdorff_at(a: &[(f64, f64)], b: &[(f64, f64)]) -> (f64, (f64, f64)) {
    a.par_iter()
        .map(|&p| (point_polyline(p, b), p))
        .reduce(|| (0.0, (f64::NAN, f64::NAN)), |x, y| if y.0 > x.0 { y } else { x })
}

pub fn directed_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    directed_hausdorff_at(a, b).0
}

#[derive(Clone, Debug, Serialize)]
pub struct LoopReport {
    pub touches_origin: bool,
    pub lambda_range: [f64; 2],
    pub solutions_at_zero: usize,
    /// `None` when no point of the limit polyline has `|lam| >= delta`.
    pub min_norm_at_nonzero_lambda: Option<f64>,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub eps: f64,
    pub endpoints: [[f64; 2]; 2],
    pub closed_mushroom: bool,
    pub n_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagram {
    pub eps_schedule: Vec<f64>,
    pub branches: Vec<Branch>,
    pub limit_polyline: Vec<(f64, f64)>,
    pub loop_report: LoopReport,
    pub hausdorff_sequence: Vec<f64>,
    /// `lam_plus` ratio between successive levels against `(eps ratio)^(1-q)`.
    pub endpoint_ratio_errors: Vec<f64>,
    pub stabilized: bool,
    pub anomalies: Vec<String>,
}

impl Diagram {
    pub fn levels(&self) -> Vec<LevelSummary> {
        self.branches
            .iter()
            .map(|b| {
                let (f, l) = (b.points.first().unwrap(), b.points.last().unwrap());
                LevelSummary {
                    eps: b.eps,
                    endpoints: [[f.lam, f.norm_inf], [l.lam, l.norm_inf]],
                    closed_mushroom: b.closed_mushroom,
                    n_points: b.points.len(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct WhyburnOptions {
    pub cont: ContOptions,
    pub hausdorff_tol: f64,
    /// Threshold for `min_norm_at_nonzero_lambda`.
    pub delta: f64,
    pub side: Side,
}

/// Crossings of `lam = 0` along the polyline, closed through the origin when
/// the branch ends on the trivial line. Touches count once.
pub fn count_zero_crossings(line: &[(f64, f64)], closed: bool) -> usize {
    let mut pts: Vec<(f64, f64)> = line.to_vec();
    if closed && !line.is_empty() {
        pts.push(line[0]);
    }
    let mut count = 0;
    let mut last_sign = 0.0;
    for &(l, _) in &pts {
        let s = if l > 0.0 {
            1.0
        } else if l < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s == 0.0 {
            if last_sign != 0.0 {
                count += 1;
            }
            last_sign = 0.0;
        } else {
            if last_sign != 0.0 && s != last_sign {
                count += 1;
            }
            last_sign = s;
        }
    }
    count
}

/// Endpoint distances decrease by a uniform geometric factor, so they tend to 0.
pub fn endpoints_shrink_geometrically(dists: &[f64]) -> bool {
    dists.len() >= 2 && dists.windows(2).all(|w| w[1] <= 0.9 * w[0])
}

/// Traces one branch per `eps`, the coarsest first so that its norm fixes the
/// anomaly cap for the others, then assembles the limit picture.
pub fn whyburn_limit(ctx: &Ctx, eps_schedule: &[f64], opts: &WhyburnOptions) -> Result<Diagram> {
    if eps_schedule.len() < 3 {
        return Err(Error::config("whyburn_limit needs at least 3 eps levels"));
    }
    if eps_schedule.windows(2).any(|w| !(w[1] < w[0]) || w[1] <= 0.0) {
        return Err(Error::config("eps_schedule must be positive and strictly decreasing"));
    }
    let reduced = reduced_principal(&ctx.lap, &ctx.field.a_vals)?;
    whyburn_with(ctx, &reduced, eps_schedule, opts)
}

pub fn whyburn_with(ctx: &Ctx, reduced: &ReducedPair, eps_schedule: &[f64], opts: &WhyburnOptions) -> Result<Diagram> {
    let run = |eps: f64, cont: &ContOptions| -> Result<Branch> {
        let pair = reduced.at_eps(&ctx.spec, eps);
        trace(&pair, opts.side, ctx, cont).map_err(|e| e.context(format!("eps = {eps:e}")))
    };
    let first = run(eps_schedule[0], &opts.cont)?;
    let mut capped = opts.cont.clone();
    if capped.norm_cap.is_none() {
        capped.norm_cap = Some(10.0 * first.max_norm());
    }
    let rest: Vec<Branch> = eps_schedule[1..].par_iter().map(|&e| run(e, &capped)).collect::<Result<_>>()?;
    let mut branches = vec![first];
    branches.extend(rest);

    let projections: Vec<Vec<(f64, f64)>> = branches.iter().map(Branch::projection).collect();
    let hausdorff_sequence: Vec<f64> = projections.windows(2).map(|w| hausdorff(&w[0], &w[1])).collect();
    let mut anomalies: Vec<String> = branches
        .iter()
        .flat_map(|b| b.anomalies.iter().map(move |a| format!("eps = {:e}: {a}", b.eps)))
        .collect();
    let tail = &hausdorff_sequence[hausdorff_sequence.len().saturating_sub(3)..];
    let monotone = tail.windows(2).all(|w| w[1] < w[0]);
    if !monotone {
        anomalies.push(format!("Hausdorff distances not decreasing: {tail:?}"));
    }
    let stabilized = monotone && hausdorff_sequence.last().is_some_and(|&d| d < opts.hausdorff_tol);

    let q = ctx.spec.q();
    let endpoint_ratio_errors = eps_schedule
        .windows(2)
        .map(|w| {
            let expected = (w[0] / w[1]).powf(1.0 - q);
            let got = reduced.at_eps(&ctx.spec, w[0]).lam_plus / reduced.at_eps(&ctx.spec, w[1]).lam_plus;
            let traced = branches.iter().find(|b| b.eps == w[0]).zip(branches.iter().find(|b| b.eps == w[1]));
            let got = traced.map_or(got, |(a, b)| a.points[0].lam / b.points[0].lam);
            (got / expected - 1.0).abs()
        })
        .collect();

    let endpoint_dist: Vec<f64> = branches
        .iter()
        .map(|b| {
            let (f, l) = (b.points.first().unwrap(), b.points.last().unwrap());
            (f.lam.abs() + f.norm_inf).max(l.lam.abs() + l.norm_inf)
        })
        .collect();
    let last = branches.last().unwrap();
    let limit_polyline = last.projection();
    let (lo, hi) = last.lambda_range();
    let min_norm = limit_polyline
        .iter()
        .filter(|p| p.0.abs() >= opts.delta)
        .map(|p| p.1)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let loop_report = LoopReport {
        touches_origin: endpoints_shrink_geometrically(&endpoint_dist) && branches.iter().all(|b| b.closed_mushroom),
        lambda_range: [lo, hi],
        solutions_at_zero: count_zero_crossings(&limit_polyline, last.closed_mushroom),
        min_norm_at_nonzero_lambda: min_norm,
        delta: opts.delta,
    };
    Ok(Diagram {
        eps_schedule: eps_schedule.to_vec(),
        branches,
        limit_polyline,
        loop_report,
        hausdorff_sequence,
        endpoint_ratio_errors,
        stabilized,
        anomalies,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionFit {
    pub slope_est: f64,
    pub slope_formula: f64,
    pub rel_err: f64,
    /// `|u/s - 1|_inf` per fitted point, in branch order.
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub n_fit: usize,
}

/// Fits `lam = c1 s + c2 s^2` over the early points with `s <= s_cap`, where
/// `s` is the mean of `u`, and compares `c1` with the closed-form slope of the
/// branch leaving `(0, 0)` under Neumann conditions.
pub fn fit_bifurcation_direction(branch: &Branch, pair: &PrincipalPair, ctx: &Ctx, s_cap: f64) -> Result<DirectionFit> {
    let spec = &ctx.spec;
    let (ia, ib) = (ctx.field.a_int, ctx.field.b_int);
    if ia >= 0.0 || ib == 0.0 {
        return Err(Error::Analysis(format!("direction formula needs int a < 0 and int b != 0 (got {ia}, {ib})")));
    }
    if (spec.sigma() - 2.0).abs() > 1e-12 {
        return Err(Error::Analysis("direction fit implemented for sigma = 2".into()));
    }
    let slope_formula = -pair.eps.powf(1.0 - spec.q()) * spec.q() * spec.g0() * ib / (spec.f0() * ia);
    let vol = ctx.grid.volume();
    let mut s = Vec::new();
    let mut lam = Vec::new();
    let mut z = Vec::new();
    for p in branch.points.iter().skip(1) {
        let sp = ctx.grid.integrate(&p.u) / vol;
        if !(sp > 0.0) || sp > s_cap {
            break;
        }
        s.push(sp);
        lam.push(p.lam);
        z.push(p.u.iter().map(|v| (v / sp - 1.0).abs()).fold(0.0, f64::max));
    }
    if s.len() < 4 {
        let first = branch.points.get(1).map_or(f64::NAN, |p| ctx.grid.integrate(&p.u) / vol);
        return Err(Error::InsufficientPoints { found: s.len(), suggested_ds0: (first * 0.25).min(s_cap / 8.0) });
    }
    // normal equations for [s, s^2]
    let (mut a11, mut a12, mut a22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in s.iter().zip(&lam) {
        let x2 = x * x;
        a11 += x * x;
        a12 += x * x2;
        a22 += x2 * x2;
        r1 += x * y;
        r2 += x2 * y;
    }
    let det = a11 * a22 - a12 * a12;
    let slope_est = (r1 * a22 - r2 * a12) / det;
    Ok(DirectionFit {
        slope_est,
        slope_formula,
        rel_err: ((slope_est - slope_formula) / slope_formula).abs(),
        n_fit: s.len(),
        z,
        s,
    })
}
