//! Sampled weight fields `a`, `b` and their structural checks: sign
//! components, positivity balls and the boundary-growth condition on `b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::WeightExpr;
use crate::mesh::{Bc, Grid};

/// Closed ball (an interval in 1D, a disc in 2D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self { center: vec![0.5 * (lo + hi)], radius: 0.5 * (hi - lo) }
    }

    pub fn contains(&self, p: &[f64; 2]) -> bool {
        let d2: f64 = self.center.iter().enumerate().map(|(ax, c)| (p[ax] - c).powi(2)).sum();
        d2 <= self.radius * self.radius * (1.0 + 1e-12)
    }

    /// First Dirichlet eigenvalue of the ball.
    pub fn dirichlet_eigenvalue(&self) -> f64 {
        match self.center.len() {
            1 => (std::f64::consts::PI / (2.0 * self.radius)).powi(2),
            _ => (BESSEL_J0_FIRST_ROOT / self.radius).powi(2),
        }
    }

    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.n_unknowns()).filter(|&k| self.contains(&grid.node_coords()[k])).collect()
    }
}

/// First positive zero of the Bessel function J0.
pub const BESSEL_J0_FIRST_ROOT: f64 = 2.404825557695773;

/// Balls `B` (where `a, b > 0`) and `B'` (where `-a, b > 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosBalls {
    pub b: Ball,
    pub b_prime: Ball,
}

/// User data for the growth condition of `b^+` near the boundary of `{b > 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbData {
    pub gamma: f64,
    pub tube_width: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Clone, Debug)]
pub struct WeightField {
    pub a_expr: String,
    pub b_expr: String,
    pub a_vals: Vec<f64>,
    pub b_vals: Vec<f64>,
    pub a_int: f64,
    pub b_int: f64,
    pub pos_balls: Option<PosBalls>,
    pub hb: Option<HbData>,
    pub a_pos_components: Vec<Vec<usize>>,
    pub a_neg_components: Vec<Vec<usize>>,
    pub b_pos_components: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    A,
    NegA,
    B,
}

pub fn sample_weights(expr_a: &str, expr_b: &str, grid: &Grid) -> Result<WeightField> {
    let ea = WeightExpr::parse(expr_a).map_err(|e| e.context("weight a"))?;
    let eb = WeightExpr::parse(expr_b).map_err(|e| e.context("weight b"))?;
    let n = grid.n_unknowns();
    let (mut a_vals, mut b_vals) = (vec![0.0; n], vec![0.0; n]);
    let (mut a_int, mut b_int) = (0.0, 0.0);
    for node in grid.closed_nodes() {
        let va = ea.eval(node.x, node.y).map_err(|e| e.context("weight a"))?;
        let vb = eb.eval(node.x, node.y).map_err(|e| e.context("weight b"))?;
        a_int += node.weight * va;
        b_int += node.weight * vb;
        if let Some(k) = node.unknown {
            a_vals[k] = va;
            b_vals[k] = vb;
        }
    }
    Ok(WeightField::from_values(grid, expr_a.into(), expr_b.into(), a_vals, b_vals, a_int, b_int))
}

impl WeightField {
    /// Builds a field from nodal values; integrals are taken as given.
    pub fn from_values(
        grid: &Grid,
        a_expr: String,
        b_expr: String,
        a_vals: Vec<f64>,
        b_vals: Vec<f64>,
        a_int: f64,
        b_int: f64,
    ) -> Self {
        let a_pos_components = components(grid, &a_vals, 1.0);
        let a_neg_components = components(grid, &a_vals, -1.0);
        let b_pos_components = components(grid, &b_vals, 1.0);
        Self {
            a_expr,
            b_expr,
            a_vals,
            b_vals,
            a_int,
            b_int,
            pos_balls: None,
            hb: None,
            a_pos_components,
            a_neg_components,
            b_pos_components,
        }
    }

    pub fn with_pos_balls(mut self, balls: PosBalls) -> Self {
        self.pos_balls = Some(balls);
        self
    }

    pub fn with_hb(mut self, hb: HbData) -> Self {
        self.hb = Some(hb);
        self
    }

    /// `a -> a - shift`, the substitution used for the critical Neumann case.
    pub fn shifted_a(&self, grid: &Grid, shift: f64) -> Self {
        let a: Vec<f64> = self.a_vals.iter().map(|v| v - shift).collect();
        let mut out = Self::from_values(
            grid,
            format!("({}) - {shift}", self.a_expr),
            self.b_expr.clone(),
            a,
            self.b_vals.clone(),
            self.a_int - shift * grid.volume(),
            self.b_int,
        );
        out.pos_balls = self.pos_balls.clone();
        out.hb = self.hb.clone();
        out
    }

    /// `a -> -a` with `B` and `B'` exchanged.
    pub fn negated_a(&self, grid: &Grid) -> Self {
        let a: Vec<f64> = self.a_vals.iter().map(|v| -v).collect();
        let mut out = Self::from_values(
            grid,
            format!("-({})", self.a_expr),
            self.b_expr.clone(),
            a,
            self.b_vals.clone(),
            -self.a_int,
            self.b_int,
        );
        out.pos_balls = self
            .pos_balls
            .as_ref()
            .map(|p| PosBalls { b: p.b_prime.clone(), b_prime: p.b.clone() });
        out.hb = self.hb.clone();
        out
    }

    pub fn b_inf(&self) -> f64 {
        self.b_vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn a_pos_inf(&self) -> f64 {
        self.a_vals.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Standing hypothesis: `a` changes sign and `b` is positive somewhere.
    pub fn check_standing(&self) -> Result<()> {
        let amin = self.a_vals.iter().copied().fold(f64::INFINITY, f64::min);
        let amax = self.a_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bmax = self.b_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(amin < 0.0 && amax > 0.0) {
            return Err(Error::Structural(format!(
                "a must change sign (min a = {amin}, max a = {amax})"
            )));
        }
        if bmax <= 0.0 {
            return Err(Error::Structural("b must be positive somewhere".into()));
        }
        Ok(())
    }

    /// Nodes where `b < 0`.
    pub fn d_b(&self) -> Vec<usize> {
        (0..self.b_vals.len()).filter(|&k| self.b_vals[k] < 0.0).collect()
    }
}

/// Connected components of `{sign * psi > 0}` under grid adjacency.
pub fn components(grid: &Grid, psi: &[f64], sign: f64) -> Vec<Vec<usize>> {
    let n = psi.len();
    let inside = |k: usize| sign * psi[k] > 0.0;
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] || !inside(start) {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let k = comp[head];
            head += 1;
            for nb in grid.neighbors(k) {
                if !seen[nb] && inside(nb) {
                    seen[nb] = true;
                    comp.push(nb);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub components: Vec<Vec<usize>>,
    /// Always true on a grid; kept to mirror the finiteness requirement.
    pub finite: bool,
    /// Indices into `components` with fewer nodes than the resolution threshold.
    pub under_resolved: Vec<usize>,
}

pub const UNDER_RESOLVED_NODES: usize = 3;

#[allow(non_snake_case)]
pub fn check_H_psi(field: &WeightField, which: Which) -> Result<ComponentReport> {
    field.check_standing()?;
    let components = match which {
        Which::A => field.a_pos_components.clone(),
        Which::NegA => field.a_neg_components.clone(),
        Which::B => field.b_pos_components.clone(),
    };
    let under_resolved = components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() < UNDER_RESOLVED_NODES)
        .map(|(i, _)| i)
        .collect();
    Ok(ComponentReport { components, finite: true, under_resolved })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosiWitness {
    pub b: Ball,
    pub b_prime: Ball,
    pub a0: f64,
    pub b0: f64,
    pub a0_prime: f64,
    pub b0_prime: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PosiReport {
    pub ok: bool,
    pub witness: Option<PosiWitness>,
    pub violation: Option<String>,
    /// True when the balls were found by search rather than supplied.
    pub searched: bool,
}

fn ball_minima(grid: &Grid, ball: &Ball, s: &[f64], t: &[f64]) -> Option<(f64, usize, f64, usize)> {
    let nodes = ball.nodes(grid);
    if nodes.is_empty() {
        return None;
    }
    let (mut ms, mut ks, mut mt, mut kt) = (f64::INFINITY, 0, f64::INFINITY, 0);
    for k in nodes {
        if s[k] < ms {
            ms = s[k];
            ks = k;
        }
        if t[k] < mt {
            mt = t[k];
            kt = k;
        }
    }
    Some((ms, ks, mt, kt))
}

/// Ball centred at a node of `{s > 0 and t > 0}`, inside that set and away
/// from the domain boundary, maximizing `min(s) r^2` over the ball. The score
/// trades the ball's Dirichlet eigenvalue against the weight it guarantees,
/// so a wide ball reaching a near-zero of `s` loses to a tighter one.
fn best_ball(grid: &Grid, s: &[f64], t: &[f64]) -> Option<Ball> {
    let n = s.len();
    // values within round-off of zero (e.g. sin at a nodal zero) do not count as positive
    let floor = |v: &[f64]| 1e-12 * v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (fs, ft) = (floor(s), floor(t));
    let good: Vec<bool> = (0..n).map(|k| s[k] > fs && t[k] > ft).collect();
    let coords = grid.node_coords();
    let dim = grid.dim();
    let half_h = 0.5 * grid.min_h();
    let dist = |i: usize, j: usize| -> f64 { (0..dim).map(|ax| (coords[i][ax] - coords[j][ax]).powi(2)).sum::<f64>().sqrt() };
    let mut best: Option<(f64, usize, f64)> = None;
    for k in (0..n).filter(|&k| good[k]) {
        let mut by_dist: Vec<(f64, usize)> = (0..n).map(|j| (dist(k, j), j)).collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut r_max = if grid.bc() == Bc::Dirichlet { grid.boundary_distance(k) } else { f64::INFINITY };
        if let Some(&(d, _)) = by_dist.iter().find(|&&(_, j)| !good[j]) {
            r_max = r_max.min(d);
        }
        if !r_max.is_finite() {
            continue;
        }
        // grow the ball node by node; radius sits half a cell beyond the last node taken
        let mut min_s = f64::INFINITY;
        for (i, &(d, j)) in by_dist.iter().enumerate() {
            if d + half_h >= r_max {
                break;
            }
            min_s = min_s.min(s[j]);
            let next = by_dist.get(i + 1).map_or(f64::INFINITY, |p| p.0);
            if next <= d {
                continue;
            }
            let r = (d + half_h).min(0.5 * (d + next)).min(r_max - half_h * 1e-3);
            let score = min_s * r * r;
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, k, r));
            }
        }
    }
    let (_, k, r) = best?;
    (r > 0.0).then(|| Ball { center: coords[k][..dim].to_vec(), radius: r })
}

pub fn check_ab_posi(field: &WeightField, grid: &Grid) -> PosiReport {
    let fail = |msg: String, searched| PosiReport { ok: false, witness: None, violation: Some(msg), searched };
    if field.b_vals.iter().all(|&v| v <= 0.0) {
        return fail("b positive somewhere".into(), false);
    }
    let neg_a: Vec<f64> = field.a_vals.iter().map(|v| -v).collect();
    let (balls, searched) = match &field.pos_balls {
        Some(p) => (p.clone(), false),
        None => {
            let b = best_ball(grid, &field.a_vals, &field.b_vals);
            let bp = best_ball(grid, &neg_a, &field.b_vals);
            match (b, bp) {
                (Some(b), Some(b_prime)) => (PosBalls { b, b_prime }, true),
                (None, _) => return fail("no ball found inside {a > 0, b > 0}".into(), true),
                (_, None) => return fail("no ball found inside {-a > 0, b > 0}".into(), true),
            }
        }
    };
    let Some((a0, ka, b0, kb)) = ball_minima(grid, &balls.b, &field.a_vals, &field.b_vals) else {
        return fail("ball B contains no grid node".into(), searched);
    };
    let Some((a0p, kap, b0p, kbp)) = ball_minima(grid, &balls.b_prime, &neg_a, &field.b_vals) else {
        return fail("ball B' contains no grid node".into(), searched);
    };
    let checks = [
        (a0 > 0.0, format!("a >= a0 > 0 on B fails at node {ka} (a = {a0})")),
        (b0 > 0.0, format!("b >= b0 > 0 on B fails at node {kb} (b = {b0})")),
        (a0p > 0.0, format!("-a >= a0' > 0 on B' fails at node {kap} (-a = {a0p})")),
        (b0p > 0.0, format!("b >= b0' > 0 on B' fails at node {kbp} (b = {b0p})")),
    ];
    if let Some((_, msg)) = checks.into_iter().find(|(ok, _)| !ok) {
        return fail(msg, searched);
    }
    PosiReport {
        ok: true,
        witness: Some(PosiWitness {
            b: balls.b,
            b_prime: balls.b_prime,
            a0,
            b0,
            a0_prime: a0p,
            b0_prime: b0p,
        }),
        violation: None,
        searched,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HbReport {
    pub ok: bool,
    pub failing_clause: Option<String>,
    pub beta_fit: Option<(f64, f64)>,
    pub tube_nodes: usize,
    pub interface_points: usize,
    pub d_b: Vec<usize>,
    pub exponent_checked: bool,
}

/// Zero crossings of `b` along grid edges, linearly interpolated.
fn interface_points(grid: &Grid, b: &[f64]) -> Vec<[f64; 2]> {
    let coords = grid.node_coords();
    let mut pts = Vec::new();
    for k in 0..b.len() {
        for nb in grid.neighbors(k) {
            if nb < k || (b[k] > 0.0) == (b[nb] > 0.0) {
                continue;
            }
            let t = b[k] / (b[k] - b[nb]);
            let (p, q) = (coords[k], coords[nb]);
            pts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    pts
}

#[allow(non_snake_case)]
pub fn check_H_b(field: &WeightField, grid: &Grid, p: f64) -> Result<HbReport> {
    let hb = field
        .hb
        .clone()
        .ok_or_else(|| Error::Structural("growth data for b (gamma, tube width) not provided".into()))?;
    let b = &field.b_vals;
    let n_dim = grid.dim() as f64;
    let mut report = HbReport {
        ok: true,
        failing_clause: None,
        beta_fit: None,
        tube_nodes: 0,
        interface_points: 0,
        d_b: field.d_b(),
        exponent_checked: n_dim > 2.0,
    };
    let fail = |r: &mut HbReport, clause: &str| {
        if r.ok {
            r.ok = false;
            r.failing_clause = Some(clause.to_string());
        }
    };
    if !(hb.beta_min > 0.0 && hb.beta_max >= hb.beta_min) {
        fail(&mut report, "beta range must satisfy 0 < beta_min <= beta_max");
    }
    if n_dim > 2.0 {
        let bound = ((n_dim + 2.0) / (n_dim - 2.0)).min((n_dim + 1.0 + hb.gamma) / (n_dim - 1.0));
        if !(p > 1.0 && p < bound) {
            fail(&mut report, "exponent: 1 < p < min((N+2)/(N-2), (N+1+gamma)/(N-1))");
        }
    }
    if hb.gamma == 0.0 {
        let bmin = b.iter().copied().fold(f64::INFINITY, f64::min);
        if bmin <= 0.0 {
            fail(&mut report, "gamma = 0 requires b > 0 on the closed domain");
        }
        return Ok(report);
    }
    // a zero node counts as interface when it touches {b > 0}; a zero plateau does not
    for k in 0..b.len() {
        if b[k] == 0.0 && !grid.neighbors(k).iter().any(|&nb| b[nb] > 0.0) {
            fail(&mut report, "b < 0 in D_b");
            break;
        }
    }
    let pts = interface_points(grid, b);
    report.interface_points = pts.len();
    let coords = grid.node_coords();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in (0..b.len()).filter(|&k| b[k] > 0.0) {
        let d = pts
            .iter()
            .map(|q| ((coords[k][0] - q[0]).powi(2) + (coords[k][1] - q[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if d >= hb.tube_width || d < 1e-12 {
            continue;
        }
        report.tube_nodes += 1;
        let beta = b[k] / d.powf(hb.gamma);
        lo = lo.min(beta);
        hi = hi.max(beta);
    }
    if report.tube_nodes > 0 {
        report.beta_fit = Some((lo, hi));
        if lo < hb.beta_min || hi > hb.beta_max {
            fail(&mut report, "beta = b+/d^gamma within [beta_min, beta_max] on the tube");
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    const PI_STR: &str = "3.14159265358979";

    fn grid1(n: usize, bc: Bc) -> Grid {
        build_grid(1, n, &[(0.0, 1.0)], bc).unwrap()
    }

    #[test]
    fn integrals_of_examples() {
        let g = grid1(200, Bc::Dirichlet);
        let w = sample_weights(&format!("sin(3*{PI_STR}*x)"), "1", &g).unwrap();
        assert!((w.a_int - 2.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-3);
        assert!((w.b_int - 1.0).abs() < 1e-12);
        let w = sample_weights(&format!("cos({PI_STR}*x)-0.2"), "1", &g).unwrap();
        assert!((w.a_int + 0.2).abs() < 1e-3);
    }

    #[test]
    fn sign_components() {
        let g = grid1(200, Bc::Dirichlet);
        let w = sample_weights(&format!("sin(3*{PI_STR}*x)"), "1", &g).unwrap();
        assert_eq!(check_H_psi(&w, Which::A).unwrap().components.len(), 2);
        assert_eq!(check_H_psi(&w, Which::NegA).unwrap().components.len(), 1);
        let w = sample_weights(&format!("cos({PI_STR}*x)-0.2"), "1", &g).unwrap();
        assert_eq!(check_H_psi(&w, Which::A).unwrap().components.len(), 1);
        let w = sample_weights("-1", "1", &g).unwrap();
        assert!(matches!(check_H_psi(&w, Which::A), Err(Error::Structural(_))));
    }

    #[test]
    fn under_resolved_component_is_flagged() {
        let g = grid1(20, Bc::Dirichlet);
        // positive only on a sliver around x = 0.5
        let w = sample_weights("0.03 - abs(x-0.5)", "1", &g).unwrap();
        let r = check_H_psi(&w, Which::A).unwrap();
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.under_resolved, vec![0]);
    }

    #[test]
    fn given_balls_report_minima() {
        let g = grid1(200, Bc::Dirichlet);
        let w = sample_weights(&format!("sin(3*{PI_STR}*x)"), "1", &g)
            .unwrap()
            .with_pos_balls(PosBalls { b: Ball::interval(0.10, 0.23), b_prime: Ball::interval(0.45, 0.55) });
        let r = check_ab_posi(&w, &g);
        assert!(r.ok, "{:?}", r.violation);
        let wit = r.witness.unwrap();
        assert!(wit.a0 > 0.0 && wit.b0 == 1.0 && wit.a0_prime > 0.0);
        for k in wit.b.nodes(&g) {
            assert!(w.a_vals[k] >= wit.a0);
        }
    }

    #[test]
    fn searched_balls_and_failures() {
        let g = grid1(100, Bc::Dirichlet);
        let w = sample_weights(&format!("sin(3*{PI_STR}*x)"), "1", &g).unwrap();
        let r = check_ab_posi(&w, &g);
        assert!(r.ok && r.searched);
        let w = sample_weights(&format!("sin(3*{PI_STR}*x)"), "-1", &g).unwrap();
        let r = check_ab_posi(&w, &g);
        assert!(!r.ok);
        assert_eq!(r.violation.as_deref(), Some("b positive somewhere"));
    }

    #[test]
    fn hb_fit_near_interface() {
        let g = grid1(199, Bc::Dirichlet);
        let hb = HbData { gamma: 1.0, tube_width: 0.05, beta_min: 0.4, beta_max: 0.6 };
        let w = sample_weights("1", "x*(1-x) - 3/16", &g).unwrap().with_hb(hb);
        let r = check_H_b(&w, &g, 2.0).unwrap();
        assert!(r.ok, "{:?}", r.failing_clause);
        let (lo, hi) = r.beta_fit.unwrap();
        assert!(lo >= 0.4 && hi <= 0.6);
        assert!(!r.exponent_checked);

        let hb0 = HbData { gamma: 0.0, tube_width: 0.05, beta_min: 0.1, beta_max: 10.0 };
        let w = sample_weights("1", "1 + x", &g).unwrap().with_hb(hb0.clone());
        assert!(check_H_b(&w, &g, 2.0).unwrap().ok);
        let w = sample_weights("1", "x - 0.5", &g).unwrap().with_hb(hb0);
        assert!(!check_H_b(&w, &g, 2.0).unwrap().ok);
    }
}
