//! Tensor grids on intervals and rectangles and the five-point (three-point
//! in 1D) discrete Laplacian.
//!
//! Unknowns are numbered with x varying fastest, so the operator bandwidth is
//! the number of unknowns along x.
//!
//! The Neumann operator closes the stencil with a reflected ghost node. That
//! row is not symmetric as written; multiplying by the trapezoid mass (1/2 on
//! faces, 1/4 at corners) makes it so. We therefore store the symmetric
//! `K = M A` together with the diagonal `M` and apply `A = M^{-1} K` nodewise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bc {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    n_per_axis: usize,
    extent: Vec<(f64, f64)>,
    bc: Bc,
    h: Vec<f64>,
    counts: Vec<usize>,
    node_coords: Vec<[f64; 2]>,
    mass: Vec<f64>,
}

/// A node of the closed grid (boundary included) used for quadrature.
#[derive(Clone, Copy, Debug)]
pub struct ClosedNode {
    pub x: f64,
    pub y: f64,
    /// Trapezoid weight, including the cell volume.
    pub weight: f64,
    pub unknown: Option<usize>,
}

pub fn build_grid(dim: usize, n_per_axis: usize, extent: &[(f64, f64)], bc: Bc) -> Result<Grid> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidGrid(format!("dimension {dim} not supported (1 or 2)")));
    }
    if n_per_axis < 3 {
        return Err(Error::InvalidGrid(format!("n_per_axis = {n_per_axis} < 3")));
    }
    if extent.len() != dim {
        return Err(Error::InvalidGrid(format!("extent has {} axes, expected {dim}", extent.len())));
    }
    for &(lo, hi) in extent {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("degenerate extent [{lo}, {hi}]")));
        }
    }
    let h: Vec<f64> = extent.iter().map(|&(lo, hi)| (hi - lo) / (n_per_axis + 1) as f64).collect();
    let per_axis = match bc {
        Bc::Dirichlet => n_per_axis,
        Bc::Neumann => n_per_axis + 2,
    };
    let counts = vec![per_axis; dim];
    let axis_coord = |axis: usize, i: usize| -> f64 {
        let k = match bc {
            Bc::Dirichlet => i + 1,
            Bc::Neumann => i,
        };
        if bc == Bc::Neumann && i + 1 == per_axis {
            extent[axis].1
        } else {
            extent[axis].0 + k as f64 * h[axis]
        }
    };
    let axis_mass = |i: usize| -> f64 {
        match bc {
            Bc::Neumann if i == 0 || i + 1 == per_axis => 0.5,
            _ => 1.0,
        }
    };
    let ny = if dim == 2 { per_axis } else { 1 };
    let mut node_coords = Vec::with_capacity(per_axis * ny);
    let mut mass = Vec::with_capacity(per_axis * ny);
    for j in 0..ny {
        for i in 0..per_axis {
            let y = if dim == 2 { axis_coord(1, j) } else { 0.0 };
            node_coords.push([axis_coord(0, i), y]);
            mass.push(axis_mass(i) * if dim == 2 { axis_mass(j) } else { 1.0 });
        }
    }
    Ok(Grid { dim, n_per_axis, extent: extent.to_vec(), bc, h, counts, node_coords, mass })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn extent(&self) -> &[(f64, f64)] {
        &self.extent
    }

    pub fn bc(&self) -> Bc {
        self.bc
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn min_h(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Unknowns along each axis.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_unknowns(&self) -> usize {
        self.node_coords.len()
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    /// Diagonal trapezoid factors (without the cell volume).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Measure of the box.
    pub fn volume(&self) -> f64 {
        self.extent.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.counts[0] * j
    }

    pub fn position(&self, k: usize) -> (usize, usize) {
        (k % self.counts[0], k / self.counts[0])
    }

    /// Discrete L2 inner product `h^d sum m_i x_i y_i`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let s: f64 = self.mass.iter().zip(x.iter().zip(y)).map(|(m, (a, b))| m * a * b).sum();
        s * self.cell_volume()
    }

    pub fn norm_l2(&self, x: &[f64]) -> f64 {
        self.inner(x, x).sqrt()
    }

    /// Quadrature of a nodal field (zero boundary values implied under Dirichlet).
    pub fn integrate(&self, v: &[f64]) -> f64 {
        let s: f64 = self.mass.iter().zip(v).map(|(m, a)| m * a).sum();
        s * self.cell_volume()
    }

    /// Grid neighbours (4-connectivity in 2D) of unknown `k`.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let (i, j) = self.position(k);
        let nx = self.counts[0];
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(k - 1);
        }
        if i + 1 < nx {
            out.push(k + 1);
        }
        if self.dim == 2 {
            let ny = self.counts[1];
            if j > 0 {
                out.push(k - nx);
            }
            if j + 1 < ny {
                out.push(k + nx);
            }
        }
        out
    }

    /// All nodes of the closed box with trapezoid weights. Under Dirichlet the
    /// boundary nodes carry no unknown.
    pub fn closed_nodes(&self) -> Vec<ClosedNode> {
        let m = self.n_per_axis + 2;
        let coord = |axis: usize, i: usize| {
            if i + 1 == m {
                self.extent[axis].1
            } else {
                self.extent[axis].0 + i as f64 * self.h[axis]
            }
        };
        let w1 = |i: usize| if i == 0 || i + 1 == m { 0.5 } else { 1.0 };
        let unknown_axis = |i: usize| match self.bc {
            Bc::Neumann => Some(i),
            Bc::Dirichlet => (i > 0 && i + 1 < m).then(|| i - 1),
        };
        let cell = self.cell_volume();
        let ny = if self.dim == 2 { m } else { 1 };
        let mut out = Vec::with_capacity(m * ny);
        for j in 0..ny {
            for i in 0..m {
                let (y, wy, uj) = if self.dim == 2 {
                    (coord(1, j), w1(j), unknown_axis(j))
                } else {
                    (0.0, 1.0, Some(0))
                };
                let unknown = match (unknown_axis(i), uj) {
                    (Some(a), Some(b)) => Some(self.index(a, b)),
                    _ => None,
                };
                out.push(ClosedNode { x: coord(0, i), y, weight: cell * w1(i) * wy, unknown });
            }
        }
        out
    }

    /// Distance from node `k` to the box boundary.
    pub fn boundary_distance(&self, k: usize) -> f64 {
        let c = self.node_coords[k];
        (0..self.dim)
            .map(|ax| (c[ax] - self.extent[ax].0).min(self.extent[ax].1 - c[ax]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteLaplacian {
    matrix: CsrMatrix,
    mass: Vec<f64>,
    bc: Bc,
}

fn axis_stiffness(n: usize, h: f64, bc: Bc) -> Vec<(usize, usize, f64)> {
    let c = 1.0 / (h * h);
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        let edge = bc == Bc::Neumann && (i == 0 || i + 1 == n);
        t.push((i, i, if edge { c } else { 2.0 * c }));
        if i > 0 {
            t.push((i, i - 1, -c));
        }
        if i + 1 < n {
            t.push((i, i + 1, -c));
        }
    }
    t
}

pub fn assemble_laplacian(grid: &Grid) -> DiscreteLaplacian {
    let nx = grid.counts[0];
    let bc = grid.bc;
    let axis_mass = |i: usize, n: usize| match bc {
        Bc::Neumann if i == 0 || i + 1 == n => 0.5,
        _ => 1.0,
    };
    let kx = axis_stiffness(nx, grid.h[0], bc);
    let matrix = if grid.dim == 1 {
        CsrMatrix::from_triplets(nx, kx)
    } else {
        let ny = grid.counts[1];
        let ky = axis_stiffness(ny, grid.h[1], bc);
        let mut t = Vec::with_capacity(nx * ny * 5);
        for j in 0..ny {
            let my = axis_mass(j, ny);
            for &(i, i2, v) in &kx {
                t.push((grid.index(i, j), grid.index(i2, j), v * my));
            }
        }
        for i in 0..nx {
            let mx = axis_mass(i, nx);
            for &(j, j2, v) in &ky {
                t.push((grid.index(i, j), grid.index(i, j2), v * mx));
            }
        }
        CsrMatrix::from_triplets(nx * ny, t)
    };
    DiscreteLaplacian { matrix, mass: grid.mass.clone(), bc }
}

impl DiscreteLaplacian {
    /// Symmetric stiffness `K = M A`.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bc(&self) -> Bc {
        self.bc
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Nodewise operator `A u = M^{-1} K u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.matvec(u);
        for (yi, m) in y.iter_mut().zip(&self.mass) {
            *yi /= m;
        }
        y
    }

    /// The nodewise operator `A` as a sparse matrix (nonsymmetric under Neumann).
    pub fn operator(&self) -> CsrMatrix {
        let inv: Vec<f64> = self.mass.iter().map(|m| 1.0 / m).collect();
        self.matrix.scale_rows(&inv)
    }

    /// `max |A_ij|`.
    pub fn max_abs(&self) -> f64 {
        (0..self.n())
            .flat_map(|i| self.matrix.row(i).map(move |(_, v)| (v / self.mass[i]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn bandwidth(&self) -> usize {
        self.matrix.bandwidth()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;

    #[test]
    fn grid_counts_and_coords() {
        let g = build_grid(1, 3, &[(0.0, 1.0)], Bc::Dirichlet).unwrap();
        assert_eq!(g.n_unknowns(), 3);
        assert_eq!(g.h()[0], 0.25);
        let xs: Vec<f64> = g.node_coords().iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);

        let g = build_grid(1, 4, &[(0.0, 1.0)], Bc::Neumann).unwrap();
        assert_eq!(g.n_unknowns(), 6);
        assert_eq!(g.node_coords()[0][0], 0.0);
        assert_eq!(g.node_coords()[5][0], 1.0);

        let g = build_grid(2, 3, &[(0.0, 1.0), (0.0, 1.0)], Bc::Dirichlet).unwrap();
        assert_eq!(g.n_unknowns(), 9);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(build_grid(1, 2, &[(0.0, 1.0)], Bc::Dirichlet).is_err());
        assert!(build_grid(1, 5, &[(1.0, 1.0)], Bc::Dirichlet).is_err());
        assert!(build_grid(3, 5, &[(0.0, 1.0); 3], Bc::Dirichlet).is_err());
    }

    #[test]
    fn dirichlet_stencil_rows() {
        let g = build_grid(1, 3, &[(0.0, 1.0)], Bc::Dirichlet).unwrap();
        let l = assemble_laplacian(&g);
        let k = l.matrix();
        assert_eq!(k.get(1, 0), -16.0);
        assert_eq!(k.get(1, 1), 32.0);
        assert_eq!(k.get(1, 2), -16.0);
        assert_eq!(k.get(0, 2), 0.0);
    }

    #[test]
    fn neumann_kernel_and_symmetry_2d() {
        let g = build_grid(2, 6, &[(0.0, 1.0), (0.0, 2.0)], Bc::Neumann).unwrap();
        let l = assemble_laplacian(&g);
        assert_eq!(l.matrix().asymmetry(), 0.0);
        let ones = vec![1.0; g.n_unknowns()];
        assert!(norm_inf(&l.apply(&ones)) < 1e-12 * l.max_abs());
        assert_eq!(l.bandwidth(), 8);
    }

    #[test]
    fn neumann_ghost_row() {
        let g = build_grid(1, 3, &[(0.0, 1.0)], Bc::Neumann).unwrap();
        let a = assemble_laplacian(&g).operator();
        // (2 u0 - 2 u1) / h^2 with h = 1/4
        assert_eq!(a.get(0, 0), 32.0);
        assert_eq!(a.get(0, 1), -32.0);
    }

    #[test]
    fn closed_quadrature_weights_sum_to_volume() {
        for bc in [Bc::Dirichlet, Bc::Neumann] {
            let g = build_grid(2, 7, &[(0.0, 2.0), (-1.0, 1.0)], bc).unwrap();
            let w: f64 = g.closed_nodes().iter().map(|n| n.weight).sum();
            assert!((w - 4.0).abs() < 1e-12);
        }
    }
}
