//! Node-based finite-volume discretization of `∇·(ε∇φ) = 0` on a uniform
//! rectangular grid, with conductors as sets of nodes held at one potential.
//!
//! Each node owns the dual cell around it. A grid edge carries the mean of
//! the permittivities of the (up to two) cells it borders, so the outer
//! boundary automatically has zero normal flux. In 2-D the cell size cancels
//! out of the stencil and edge coefficients are plain relative permittivities.

use crate::error::{Error, Result};

pub(crate) const FREE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub(crate) struct Operator {
    pub nx: usize,
    pub ny: usize,
    /// Edge `(i, j)–(i+1, j)`, indexed `j * nx + i`.
    pub ce: Vec<f64>,
    /// Edge `(i, j)–(i, j+1)`, indexed `j * nx + i`.
    pub cn: Vec<f64>,
    /// Conductor index per node, or `FREE`.
    pub label: Vec<u32>,
    pub n_conductors: usize,
    /// Free-block stencil: neighbour couplings zeroed where the neighbour is
    /// outside the grid or fixed, and everything zeroed on fixed nodes.
    stencil: Stencil,
    /// Reciprocal incomplete-Cholesky pivots, zero on fixed nodes.
    inv_pivot: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Stencil {
    diag: Vec<f64>,
    w: Vec<f64>,
    e: Vec<f64>,
    s: Vec<f64>,
    n: Vec<f64>,
}

/// Relaxation of the modified incomplete factorization; 1 preserves row
/// sums exactly, slightly less keeps the pivots safely positive.
const MIC_RELAXATION: f64 = 0.97;

/// Outcome of one Dirichlet solve.
#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub phi: Vec<f64>,
    pub iterations: usize,
}

impl Operator {
    /// `eps_cell` holds `(nx-1)*(ny-1)` relative permittivities, row-major.
    pub fn new(
        nx: usize,
        ny: usize,
        eps_cell: &[f64],
        label: Vec<u32>,
        n_conductors: usize,
    ) -> Self {
        assert_eq!(eps_cell.len(), (nx - 1) * (ny - 1));
        assert_eq!(label.len(), nx * ny);
        let cell = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= nx as isize - 1 || j >= ny as isize - 1 {
                0.0
            } else {
                eps_cell[j as usize * (nx - 1) + i as usize]
            }
        };
        let n = nx * ny;
        let mut ce = vec![0.0; n];
        let mut cn = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let (ii, jj) = (i as isize, j as isize);
                if i + 1 < nx {
                    ce[j * nx + i] = 0.5 * (cell(ii, jj - 1) + cell(ii, jj));
                }
                if j + 1 < ny {
                    cn[j * nx + i] = 0.5 * (cell(ii - 1, jj) + cell(ii, jj));
                }
            }
        }
        let free = |k: usize| label[k] == FREE;
        let mut st = Stencil {
            diag: vec![0.0; n],
            w: vec![0.0; n],
            e: vec![0.0; n],
            s: vec![0.0; n],
            n: vec![0.0; n],
        };
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !free(k) {
                    continue;
                }
                let w = if i > 0 { ce[k - 1] } else { 0.0 };
                let e = if i + 1 < nx { ce[k] } else { 0.0 };
                let s = if j > 0 { cn[k - nx] } else { 0.0 };
                let nn = if j + 1 < ny { cn[k] } else { 0.0 };
                st.diag[k] = w + e + s + nn;
                st.w[k] = if i > 0 && free(k - 1) { w } else { 0.0 };
                st.e[k] = if i + 1 < nx && free(k + 1) { e } else { 0.0 };
                st.s[k] = if j > 0 && free(k - nx) { s } else { 0.0 };
                st.n[k] = if j + 1 < ny && free(k + nx) { nn } else { 0.0 };
            }
        }
        // Modified IC(0). For a five-point stencil the factor has the
        // pattern of the lower triangle, so only the pivots need storing.
        let mut pivot = vec![0.0; n];
        for k in 0..n {
            if !free(k) {
                continue;
            }
            let mut d = st.diag[k];
            if st.w[k] != 0.0 {
                let (c, p) = (st.w[k], pivot[k - 1]);
                d -= c * (c + MIC_RELAXATION * st.n[k - 1]) / p;
            }
            if st.s[k] != 0.0 {
                let (c, p) = (st.s[k], pivot[k - nx]);
                d -= c * (c + MIC_RELAXATION * st.e[k - nx]) / p;
            }
            // Guard against breakdown; the relaxed factor keeps d well
            // above this in practice.
            pivot[k] = d.max(1e-3 * st.diag[k]);
        }
        let inv_pivot = pivot
            .iter()
            .map(|&p| if p > 0.0 { 1.0 / p } else { 0.0 })
            .collect();
        Self {
            nx,
            ny,
            ce,
            cn,
            label,
            n_conductors,
            stencil: st,
            inv_pivot,
        }
    }

    #[inline]
    fn is_free(&self, k: usize) -> bool {
        self.label[k] == FREE
    }

    /// Vectors are padded by `nx + 1` zeros on both ends so that neighbour
    /// reads never leave the buffer.
    fn pad(&self) -> usize {
        self.nx + 1
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, p0) = (self.nx, self.pad());
        let st = &self.stencil;
        for k in 0..self.nx * self.ny {
            let p = k + p0;
            y[p] = st.diag[k] * x[p]
                - st.w[k] * x[p - 1]
                - st.e[k] * x[p + 1]
                - st.s[k] * x[p - nx]
                - st.n[k] * x[p + nx];
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let (nx, p0) = (self.nx, self.pad());
        let st = &self.stencil;
        let n = nx * self.ny;
        for k in 0..n {
            let p = k + p0;
            z[p] = (r[p] + st.w[k] * z[p - 1] + st.s[k] * z[p - nx]) * self.inv_pivot[k];
        }
        for k in (0..n).rev() {
            let p = k + p0;
            z[p] += (st.e[k] * z[p + 1] + st.n[k] * z[p + nx]) * self.inv_pivot[k];
        }
    }

    /// Solves with conductor `c` held at `values[c]`.
    pub fn solve(&self, values: &[f64], rel_tol: f64, max_iterations: usize) -> Result<Solution> {
        assert_eq!(values.len(), self.n_conductors);
        let n = self.nx * self.ny;
        let nx = self.nx;
        let mut phi = vec![0.0; n];
        for k in 0..n {
            if !self.is_free(k) {
                phi[k] = values[self.label[k] as usize];
            }
        }
        let p0 = self.pad();
        let len = n + 2 * p0;
        // Right-hand side: couplings of free nodes to fixed neighbours.
        let mut r = vec![0.0; len];
        for k in 0..n {
            if !self.is_free(k) {
                continue;
            }
            let i = k % nx;
            let j = k / nx;
            let mut v = 0.0;
            if i > 0 && !self.is_free(k - 1) {
                v += self.ce[k - 1] * phi[k - 1];
            }
            if i + 1 < nx && !self.is_free(k + 1) {
                v += self.ce[k] * phi[k + 1];
            }
            if j > 0 && !self.is_free(k - nx) {
                v += self.cn[k - nx] * phi[k - nx];
            }
            if j + 1 < self.ny && !self.is_free(k + nx) {
                v += self.cn[k] * phi[k + nx];
            }
            r[k + p0] = v;
        }
        let b_norm = norm(&r);
        if b_norm == 0.0 {
            return Ok(Solution { phi, iterations: 0 });
        }

        let mut x = vec![0.0; len];
        let mut z = vec![0.0; len];
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; len];
        let mut residual = 1.0;
        for it in 1..=max_iterations {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in p0..p0 + n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            residual = norm(&r) / b_norm;
            if residual <= rel_tol {
                for k in 0..n {
                    if self.is_free(k) {
                        phi[k] = x[k + p0];
                    }
                }
                return Ok(Solution {
                    phi,
                    iterations: it,
                });
            }
            self.precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in p0..p0 + n {
                p[k] = z[k] + beta * p[k];
            }
        }
        Err(Error::Solver {
            iterations: max_iterations,
            residual,
        })
    }

    /// Net outward flux from each conductor (relative units; multiply by
    /// `ε0` for charge per unit length).
    pub fn conductor_flux(&self, phi: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let mut q = vec![0.0; self.n_conductors];
        for k in 0..nx * self.ny {
            if self.is_free(k) {
                continue;
            }
            let i = k % nx;
            let j = k / nx;
            let mut v = 0.0;
            if i > 0 {
                v += self.ce[k - 1] * (phi[k] - phi[k - 1]);
            }
            if i + 1 < nx {
                v += self.ce[k] * (phi[k] - phi[k + 1]);
            }
            if j > 0 {
                v += self.cn[k - nx] * (phi[k] - phi[k - nx]);
            }
            if j + 1 < self.ny {
                v += self.cn[k] * (phi[k] - phi[k + nx]);
            }
            q[self.label[k] as usize] += v;
        }
        q
    }

    /// `½ Σ_edges c (Δφ)²` in relative units.
    #[cfg(test)]
    pub fn edge_energy(&self, phi: &[f64]) -> f64 {
        let nx = self.nx;
        let mut e = 0.0;
        for k in 0..nx * self.ny {
            let i = k % nx;
            if i + 1 < nx {
                let d = phi[k + 1] - phi[k];
                e += self.ce[k] * d * d;
            }
            if k + nx < nx * self.ny {
                let d = phi[k + nx] - phi[k];
                e += self.cn[k] * d * d;
            }
        }
        0.5 * e
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(nx: usize, ny: usize) -> Operator {
        // Bottom row conductor 0, top row conductor 1, uniform ε = 1.
        let eps = vec![1.0; (nx - 1) * (ny - 1)];
        let mut label = vec![FREE; nx * ny];
        for i in 0..nx {
            label[i] = 0;
            label[(ny - 1) * nx + i] = 1;
        }
        Operator::new(nx, ny, &eps, label, 2)
    }

    #[test]
    fn linear_profile_between_plates() {
        let op = strip(9, 11);
        let s = op.solve(&[0.0, 1.0], 1e-13, 1000).unwrap();
        for j in 0..11 {
            for i in 0..9 {
                let want = j as f64 / 10.0;
                assert!((s.phi[j * 9 + i] - want).abs() < 1e-12);
            }
        }
        // flux per unit width is 1/gap in cell units: 8 cells wide, 10 tall
        let q = op.conductor_flux(&s.phi);
        assert!((q[1] - 8.0 / 10.0).abs() < 1e-11);
        assert!((q[0] + q[1]).abs() < 1e-11);
        assert!((op.edge_energy(&s.phi) - 0.5 * q[1]).abs() < 1e-11);
    }

    #[test]
    fn zero_boundary_values_give_zero_field() {
        let op = strip(5, 5);
        let s = op.solve(&[0.0, 0.0], 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(s.phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stalled_solver_reports_residual() {
        let op = strip(40, 40);
        match op.solve(&[0.0, 1.0], 1e-15, 1) {
            Err(Error::Solver {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
