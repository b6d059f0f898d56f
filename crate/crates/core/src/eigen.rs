//! Principal eigenvalues of the weighted pencil `K phi = mu diag(m a) phi`.
//!
//! With `K - tau D = L L^T` (Cholesky; `tau = 0` under Dirichlet, a small
//! positive shift under Neumann where `K` is singular) the pencil becomes the
//! symmetric standard problem `L^-1 D L^-T y = nu y`, `nu = 1/(mu - tau)`.
//! The principal eigenvalues are the extreme Ritz values of that operator,
//! found by Lanczos with full reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, BandCholesky, CsrMatrix};
use crate::mesh::{Bc, DiscreteLaplacian};
use crate::nonlin::NonlinSpec;
use crate::weights::WeightField;

/// Margins below this are reported as a (near) multiple eigenvalue.
pub const MARGIN_FLAG: f64 = 1e-6;

/// The symmetric operator `L^-1 D L^-T` of a shifted pencil.
pub struct ShiftedPencil {
    k: CsrMatrix,
    chol: BandCholesky,
    d: Vec<f64>,
    tau: f64,
}

/// Ritz pair of the shifted operator.
#[derive(Clone, Debug)]
pub struct RitzPair {
    pub nu: f64,
    pub y: Vec<f64>,
    pub residual: f64,
}

impl ShiftedPencil {
    pub fn new(k: &CsrMatrix, d: &[f64], tau: f64) -> Result<Self> {
        let shifted = if tau == 0.0 {
            k.clone()
        } else {
            let n = k.n();
            let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(k.nnz() + n);
            for i in 0..n {
                t.extend(k.row(i).map(|(j, v)| (i, j, v)));
                t.push((i, i, -tau * d[i]));
            }
            CsrMatrix::from_triplets(n, t)
        };
        let chol = BandCholesky::factor(&shifted)?;
        Ok(Self { k: k.clone(), chol, d: d.to_vec(), tau })
    }

    /// Smallest shift of the form `2^-j` making `K - tau D` positive definite.
    pub fn with_auto_shift(k: &CsrMatrix, d: &[f64]) -> Result<Self> {
        let mut tau = 1.0;
        for _ in 0..60 {
            if let Ok(p) = Self::new(k, d, tau) {
                return Ok(p);
            }
            tau *= 0.5;
        }
        Err(Error::NoPositivePrincipal)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.chol.solve_upper(x);
        for (zi, di) in z.iter_mut().zip(&self.d) {
            *zi *= di;
        }
        self.chol.solve_lower(&z)
    }

    /// Eigenvector of the pencil from a vector of the symmetric problem.
    pub fn to_phi(&self, y: &[f64]) -> Vec<f64> {
        self.chol.solve_upper(y)
    }

    pub fn to_y(&self, phi: &[f64]) -> Vec<f64> {
        self.chol.mul_upper(phi)
    }

    pub fn mu_of(&self, nu: f64) -> f64 {
        self.tau + 1.0 / nu
    }

    /// Rayleigh quotient `phi^T K phi / phi^T D phi`.
    pub fn rayleigh(&self, phi: &[f64]) -> f64 {
        let kp = self.k.matvec(phi);
        let num = dot(phi, &kp);
        let den: f64 = phi.iter().zip(&self.d).map(|(p, d)| p * p * d).sum();
        num / den
    }

    /// Ritz pairs sorted by decreasing `nu`, computed in the orthogonal
    /// complement of `locked` (vectors of the symmetric problem). The Krylov
    /// dimension grows until `want` extreme pairs on each side are converged.
    pub fn lanczos(&self, locked: &[Vec<f64>], want: usize) -> Result<Vec<RitzPair>> {
        let n = self.n();
        let avail = n.saturating_sub(locked.len());
        if avail == 0 {
            return Ok(Vec::new());
        }
        let locked: Vec<Vec<f64>> = locked
            .iter()
            .map(|v| {
                let s = norm2(v);
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let mut m = avail.min(80);
        loop {
            let pairs = self.lanczos_run(&locked, m)?;
            let scale = pairs.iter().fold(0.0_f64, |a, p| a.max(p.nu.abs())).max(f64::MIN_POSITIVE);
            let tol = 1e-12 * scale;
            let pos: Vec<&RitzPair> = pairs.iter().filter(|p| p.nu > 0.0).take(want).collect();
            let neg: Vec<&RitzPair> = pairs.iter().rev().filter(|p| p.nu < 0.0).take(want).collect();
            let ok = pos.iter().chain(neg.iter()).all(|p| p.residual <= tol);
            if ok || m >= avail || pairs.len() < m {
                if !ok && m >= avail && pairs.len() == m {
                    return Err(Error::EigenNoConvergence(format!("Krylov dimension {m} exhausted")));
                }
                return Ok(pairs);
            }
            m = (2 * m).min(avail);
        }
    }

    fn lanczos_run(&self, locked: &[Vec<f64>], m: usize) -> Result<Vec<RitzPair>> {
        let n = self.n();
        let project = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
            for _ in 0..2 {
                for b in basis {
                    let c = dot(v, b);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= c * bi;
                    }
                }
            }
        };
        // A fresh stream per locking depth: reusing the unlocked start would
        // leave it orthogonal to the rest of a multiple eigenspace.
        let mut rng = ChaCha8Rng::seed_from_u64(0x51DE_CA57);
        rng.set_stream(locked.len() as u64);
        let mut q0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        project(&mut q0, locked);
        let s = norm2(&q0);
        if s == 0.0 {
            return Err(Error::EigenNoConvergence("start vector lies in the locked space".into()));
        }
        q0.iter_mut().for_each(|x| *x /= s);
        let mut qs: Vec<Vec<f64>> = vec![q0];
        let (mut alpha, mut beta) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut last_beta = 0.0;
        for j in 0..m {
            let mut w = self.apply(&qs[j]);
            project(&mut w, locked);
            let a = dot(&w, &qs[j]);
            alpha.push(a);
            for pass in 0..2 {
                for q in qs.iter() {
                    let c = dot(&w, q);
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= c * qi;
                    }
                }
                if pass == 0 {
                    project(&mut w, locked);
                }
            }
            let b = norm2(&w);
            last_beta = b;
            let amax = alpha.iter().fold(0.0_f64, |x, v| x.max(v.abs()));
            if j + 1 == m || b <= 1e-13 * amax.max(f64::MIN_POSITIVE) {
                break;
            }
            beta.push(b);
            qs.push(w.into_iter().map(|x| x / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
        let tail_beta = if k == m { last_beta } else { 0.0 };
        Ok(order
            .into_iter()
            .map(|c| {
                let mut y = vec![0.0; n];
                for (i, q) in qs.iter().take(k).enumerate() {
                    let s = eig.eigenvectors[(i, c)];
                    for (yi, qi) in y.iter_mut().zip(q) {
                        *yi += s * qi;
                    }
                }
                RitzPair {
                    nu: eig.eigenvalues[c],
                    y,
                    residual: (tail_beta * eig.eigenvectors[(k - 1, c)]).abs(),
                }
            })
            .collect())
    }
}

/// Scales so the entry of largest magnitude is +1.
pub fn sign_fix(v: &mut [f64]) {
    let mut big = 0.0_f64;
    for &x in v.iter() {
        if x.abs() > big.abs() {
            big = x;
        }
    }
    if big != 0.0 {
        v.iter_mut().for_each(|x| *x /= big);
    }
}

fn is_positive(v: &[f64]) -> bool {
    v.iter().all(|&x| x > 0.0)
}

/// Principal eigenvalues of the reduced, `eps`-free pencil.
#[derive(Clone, Debug, Serialize)]
pub struct ReducedPair {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub phi_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
    pub tau: f64,
    pub bc: Bc,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrincipalPair {
    pub eps: f64,
    pub lam_plus: f64,
    pub lam_minus: f64,
    pub phi_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
    pub mu_plus: f64,
    pub mu_minus: f64,
    /// `eps^(1-q) q / f0`, the factor taking `mu` to `lambda`.
    pub scale: f64,
    pub tau: f64,
    pub bc: Bc,
}

impl PrincipalPair {
    pub fn lam(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.lam_plus,
            Side::Minus => self.lam_minus,
        }
    }

    pub fn phi(&self, side: Side) -> &[f64] {
        match side {
            Side::Plus => &self.phi_plus,
            Side::Minus => &self.phi_minus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// `eps^(1-q) q / f0`.
pub fn eps_scale(spec: &NonlinSpec, eps: f64) -> f64 {
    eps.powf(1.0 - spec.q()) * spec.q() / spec.f0()
}

/// Weighted diagonal `m_i a_i` of the pencil.
pub fn pencil_diag(lap: &DiscreteLaplacian, a_vals: &[f64]) -> Vec<f64> {
    lap.mass().iter().zip(a_vals).map(|(m, a)| m * a).collect()
}

fn pencil_for(lap: &DiscreteLaplacian, a_vals: &[f64]) -> Result<ShiftedPencil> {
    let d = pencil_diag(lap, a_vals);
    match lap.bc() {
        Bc::Dirichlet => ShiftedPencil::new(lap.matrix(), &d, 0.0),
        Bc::Neumann => {
            if d.iter().sum::<f64>() >= 0.0 {
                return Err(Error::NoPositivePrincipal);
            }
            ShiftedPencil::with_auto_shift(lap.matrix(), &d)
        }
    }
}

/// First Ritz pair on the given side whose eigenvector is positive.
fn select(pencil: &ShiftedPencil, pairs: &[RitzPair], positive_nu: bool) -> Option<(f64, Vec<f64>)> {
    let it: Box<dyn Iterator<Item = &RitzPair>> = if positive_nu {
        Box::new(pairs.iter().filter(|p| p.nu > 0.0))
    } else {
        Box::new(pairs.iter().rev().filter(|p| p.nu < 0.0))
    };
    for p in it.take(4) {
        let mut phi = pencil.to_phi(&p.y);
        sign_fix(&mut phi);
        if is_positive(&phi) {
            return Some((pencil.rayleigh(&phi), phi));
        }
    }
    None
}

/// Solves the reduced pencil `A phi = mu a phi`; independent of `eps`.
pub fn reduced_principal(lap: &DiscreteLaplacian, a_vals: &[f64]) -> Result<ReducedPair> {
    let pencil = pencil_for(lap, a_vals)?;
    let pairs = pencil.lanczos(&[], 3)?;
    let (mu_plus, phi_plus) = select(&pencil, &pairs, true).ok_or(Error::NoPositivePrincipal)?;
    let (mu_minus, phi_minus) = match lap.bc() {
        Bc::Dirichlet => select(&pencil, &pairs, false).ok_or(Error::NoPositivePrincipal)?,
        Bc::Neumann => (0.0, vec![1.0; lap.n()]),
    };
    Ok(ReducedPair { mu_plus, mu_minus, phi_plus, phi_minus, tau: pencil.tau(), bc: lap.bc() })
}

impl ReducedPair {
    pub fn at_eps(&self, spec: &NonlinSpec, eps: f64) -> PrincipalPair {
        let scale = eps_scale(spec, eps);
        PrincipalPair {
            eps,
            lam_plus: scale * self.mu_plus,
            lam_minus: scale * self.mu_minus,
            phi_plus: self.phi_plus.clone(),
            phi_minus: self.phi_minus.clone(),
            mu_plus: self.mu_plus,
            mu_minus: self.mu_minus,
            scale,
            tau: self.tau,
            bc: self.bc,
        }
    }
}

pub fn principal_eigs(lap: &DiscreteLaplacian, field: &WeightField, spec: &NonlinSpec, eps: f64) -> Result<PrincipalPair> {
    if !(eps > 0.0) {
        return Err(Error::Analysis(format!("eps = {eps} must be positive")));
    }
    Ok(reduced_principal(lap, &field.a_vals)?.at_eps(spec, eps))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransversalityReport {
    /// Relative gap between `mu+` and the next eigenvalue on the positive side.
    pub plus: f64,
    /// Same on the negative side; absent under Neumann where `mu- = 0`.
    pub minus: Option<f64>,
    pub flagged: bool,
}

/// Gap between the extreme eigenvalue on one side and the next one there,
/// computed with the extreme vector locked out so that a double eigenvalue
/// shows up as a zero gap.
pub fn side_gap(pencil: &ShiftedPencil, phi: &[f64], positive_nu: bool) -> Result<f64> {
    let y1 = pencil.to_y(phi);
    let mu1 = pencil.rayleigh(phi);
    let pairs = pencil.lanczos(&[y1], 2)?;
    let next = if positive_nu {
        pairs.iter().find(|p| p.nu > 0.0)
    } else {
        pairs.iter().rev().find(|p| p.nu < 0.0)
    };
    Ok(match next {
        Some(p) => (pencil.mu_of(p.nu) - mu1).abs() / mu1.abs().max(f64::MIN_POSITIVE),
        None => f64::INFINITY,
    })
}

pub fn transversality_margin(pair: &PrincipalPair, lap: &DiscreteLaplacian, field: &WeightField) -> Result<TransversalityReport> {
    let pencil = pencil_for(lap, &field.a_vals)?;
    let plus = side_gap(&pencil, &pair.phi_plus, true)?;
    let minus = match lap.bc() {
        Bc::Dirichlet => Some(side_gap(&pencil, &pair.phi_minus, false)?),
        Bc::Neumann => None,
    };
    let flagged = plus < MARGIN_FLAG || minus.is_some_and(|m| m < MARGIN_FLAG);
    Ok(TransversalityReport { plus, minus, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_laplacian, build_grid};
    use crate::weights::sample_weights;

    #[test]
    fn constant_weight_gives_pi_squared() {
        let g = build_grid(1, 200, &[(0.0, 1.0)], Bc::Dirichlet).unwrap();
        let lap = assemble_laplacian(&g);
        let d = pencil_diag(&lap, &vec![1.0; 200]);
        let p = ShiftedPencil::new(lap.matrix(), &d, 0.0).unwrap();
        let pairs = p.lanczos(&[], 2).unwrap();
        let mu = p.mu_of(pairs[0].nu);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((mu - pi2).abs() / pi2 < 1e-3);
    }

    #[test]
    fn doubled_eigenvalue_is_flagged() {
        let k = CsrMatrix::from_triplets(4, vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 2.0), (3, 3, 3.0)]);
        let d = vec![1.0, 1.0, 1.0, -1.0];
        let p = ShiftedPencil::new(&k, &d, 0.0).unwrap();
        let pairs = p.lanczos(&[], 2).unwrap();
        let phi = p.to_phi(&pairs[0].y);
        assert!(side_gap(&p, &phi, true).unwrap() < MARGIN_FLAG);
    }

    #[test]
    fn neumann_zero_and_symmetry() {
        let g = build_grid(1, 100, &[(0.0, 1.0)], Bc::Neumann).unwrap();
        let lap = assemble_laplacian(&g);
        let w = sample_weights("cos(3.14159265358979*x)-0.2", "1", &g).unwrap();
        let r = reduced_principal(&lap, &w.a_vals).unwrap();
        assert_eq!(r.mu_minus, 0.0);
        assert!(r.phi_minus.iter().all(|&v| v == 1.0));
        assert!(r.mu_plus > 0.0 && r.phi_plus.iter().all(|&v| v > 0.0));
        let neg = sample_weights("0.2-cos(3.14159265358979*x)", "1", &g).unwrap();
        assert!(matches!(reduced_principal(&lap, &neg.a_vals), Err(Error::NoPositivePrincipal)));
    }

    #[test]
    fn negative_weight_has_no_positive_principal() {
        let g = build_grid(1, 40, &[(0.0, 1.0)], Bc::Dirichlet).unwrap();
        let lap = assemble_laplacian(&g);
        assert!(matches!(reduced_principal(&lap, &vec![-1.0; 40]), Err(Error::NoPositivePrincipal)));
    }
}
