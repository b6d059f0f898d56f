//! Dense solver for the pencil `K phi = mu diag(m a) phi`: Cholesky of the
//! shifted stiffness, Householder tridiagonalization and implicit QL.

use loopbif::mesh::{Bc, DiscreteLaplacian};
use loopbif::{Error, Result};

pub const MAX_UNKNOWNS: usize = 400;

#[derive(Clone, Debug)]
pub struct DenseEigResult {
    /// Finite eigenvalues in increasing order.
    pub eigenvalues: Vec<f64>,
    /// Column `j` (as `eigenvectors[j]`) belongs to `eigenvalues[j]`, scaled
    /// so its largest entry in magnitude is `+1`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `|A phi - mu a phi|_inf` per pair, `A` the nodewise operator.
    pub residuals: Vec<f64>,
    pub a_max: f64,
}

impl DenseEigResult {
    fn positive(&self, j: usize) -> bool {
        self.eigenvectors[j].iter().all(|&x| x > 0.0)
    }

    /// Smallest positive eigenvalue with a positive eigenvector.
    pub fn mu_plus(&self) -> Option<f64> {
        (0..self.eigenvalues.len()).find(|&j| self.eigenvalues[j] > 0.0 && self.positive(j)).map(|j| self.eigenvalues[j])
    }

    /// Largest negative eigenvalue with a positive eigenvector.
    pub fn mu_minus(&self) -> Option<f64> {
        (0..self.eigenvalues.len()).rev().find(|&j| self.eigenvalues[j] < 0.0 && self.positive(j)).map(|j| self.eigenvalues[j])
    }

    pub fn vector_of(&self, mu: f64) -> Option<&[f64]> {
        self.eigenvalues.iter().position(|&v| v == mu).map(|j| self.eigenvectors[j].as_slice())
    }
}

type Dense = Vec<Vec<f64>>;

fn cholesky(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut s = a[j][j];
        for k in 0..j {
            s -= l[j][k] * l[j][k];
        }
        if !(s > 0.0) {
            return None;
        }
        l[j][j] = s.sqrt();
        for i in j + 1..n {
            let mut t = a[i][j];
            for k in 0..j {
                t -= l[i][k] * l[j][k];
            }
            l[i][j] = t / l[j][j];
        }
    }
    Some(l)
}

/// Solves `L x = b`.
fn forward(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l[i][k] * x[k];
        }
        x[i] /= l[i][i];
    }
    x
}

/// Solves `L^T x = b`.
fn backward(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[k][i] * x[k];
        }
        x[i] /= l[i][i];
    }
    x
}

/// Householder reduction of symmetric `a` to tridiagonal form. Returns the
/// diagonal, the subdiagonal (`e[i]` couples `i` and `i + 1`) and the
/// accumulated orthogonal transform.
fn tridiagonalize(mut a: Dense) -> (Vec<f64>, Vec<f64>, Dense) {
    let n = a.len();
    let mut q: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] > 0.0 { -norm } else { norm };
        let mut w = vec![0.0; n];
        for i in k + 1..n {
            w[i] = a[i][k];
        }
        w[k + 1] -= alpha;
        let wn: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        // a <- H a H with H = I - 2 w w^T
        let p: Vec<f64> = (0..n).map(|i| (k + 1..n).map(|j| a[i][j] * w[j]).sum()).collect();
        let kk: f64 = (0..n).map(|i| w[i] * p[i]).sum();
        let qv: Vec<f64> = (0..n).map(|i| p[i] - kk * w[i]).collect();
        for i in 0..n {
            for j in 0..n {
                a[i][j] -= 2.0 * (w[i] * qv[j] + qv[i] * w[j]);
            }
        }
        // q <- q H
        for row in q.iter_mut() {
            let s: f64 = (k + 1..n).map(|j| row[j] * w[j]).sum();
            for j in k + 1..n {
                row[j] -= 2.0 * s * w[j];
            }
        }
    }
    let d = (0..n).map(|i| a[i][i]).collect();
    let e = (0..n).map(|i| if i + 1 < n { a[i + 1][i] } else { 0.0 }).collect();
    (d, e, q)
}

/// Implicit QL with Wilkinson-type shifts on the tridiagonal `(d, e)`,
/// rotating the columns of `z`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut Dense) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::EigenNoConvergence("dense QL iteration".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Full eigen-decomposition of the symmetric matrix `a`.
pub fn symmetric_eig(a: Dense) -> Result<(Vec<f64>, Dense)> {
    let (mut d, mut e, mut z) = tridiagonalize(a);
    tridiagonal_ql(&mut d, &mut e, &mut z)?;
    Ok((d, z))
}

/// All finite eigenpairs of `K phi = mu diag(m a) phi`.
pub fn dense_weighted_eig(lap: &DiscreteLaplacian, a_vals: &[f64]) -> Result<DenseEigResult> {
    let n = lap.n();
    if n > MAX_UNKNOWNS {
        return Err(Error::InvalidGrid(format!("{n} unknowns exceed the dense cap {MAX_UNKNOWNS}")));
    }
    let kd = lap.matrix().to_dense();
    let k: Dense = (0..n).map(|i| (0..n).map(|j| kd[(i, j)]).collect()).collect();
    let d: Vec<f64> = lap.mass().iter().zip(a_vals).map(|(m, a)| m * a).collect();
    let shifted = |tau: f64| -> Dense {
        let mut s = k.clone();
        for i in 0..n {
            s[i][i] -= tau * d[i];
        }
        s
    };
    let (tau, l) = match lap.bc() {
        Bc::Dirichlet => (0.0, cholesky(&k).ok_or(Error::NotPositiveDefinite { index: 0 })?),
        Bc::Neumann => {
            let mut tau = 1.0;
            loop {
                if let Some(l) = cholesky(&shifted(tau)) {
                    break (tau, l);
                }
                tau *= 0.5;
                if tau < 1e-18 {
                    return Err(Error::NoPositivePrincipal);
                }
            }
        }
    };
    // C = L^-1 D L^-T, built column by column
    let mut c = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut ej = vec![0.0; n];
        ej[j] = 1.0;
        let col = backward(&l, &ej);
        let dc: Vec<f64> = col.iter().zip(&d).map(|(x, di)| x * di).collect();
        let cj = forward(&l, &dc);
        for i in 0..n {
            c[i][j] = cj[i];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = v;
            c[j][i] = v;
        }
    }
    let (nus, z) = symmetric_eig(c)?;
    let nu_scale = nus.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let a_max = lap.max_abs();
    let op = lap.operator();
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    for (j, &nu) in nus.iter().enumerate() {
        if nu.abs() <= 1e-14 * nu_scale {
            continue;
        }
        let y: Vec<f64> = (0..n).map(|i| z[i][j]).collect();
        let mut phi = backward(&l, &y);
        let big = phi.iter().fold(0.0_f64, |m, &x| if x.abs() > m.abs() { x } else { m });
        phi.iter_mut().for_each(|x| *x /= big);
        let mu = tau + 1.0 / nu;
        pairs.push((mu, phi));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let residuals = pairs
        .iter()
        .map(|(mu, phi)| {
            let ap = op.matvec(phi);
            (0..n).map(|i| (ap[i] - mu * a_vals[i] * phi[i]).abs()).fold(0.0, f64::max)
        })
        .collect();
    Ok(DenseEigResult {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        eigenvectors: pairs.into_iter().map(|p| p.1).collect(),
        residuals,
        a_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ql_on_known_matrix() {
        // eigenvalues of the 1D Dirichlet stencil tridiag(-1, 2, -1) of size 5
        let n: usize = 5;
        let a: Dense = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 }).collect())
            .collect();
        let (mut d, z) = symmetric_eig(a.clone()).unwrap();
        let mut exact: Vec<f64> = (1..=n).map(|k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / 6.0).cos()).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, y) in d.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-13);
        }
        // orthogonality of the accumulated transform
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| z[k][i] * z[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dense_matrix_with_full_coupling() {
        let a: Dense = vec![vec![4.0, 1.0, 2.0], vec![1.0, 3.0, 0.5], vec![2.0, 0.5, 1.0]];
        let (d, z) = symmetric_eig(a.clone()).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|k| a[i][k] * z[k][j]).sum();
                assert!((av - d[j] * z[i][j]).abs() < 1e-12);
            }
        }
    }
}
