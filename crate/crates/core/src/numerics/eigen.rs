//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Graph Laplacians in this crate have one row per word, so matrices stay
//! small and the O(n³)-per-sweep cost of Jacobi is irrelevant. In exchange
//! the method keeps every intermediate exactly symmetric and produces
//! eigenvectors orthonormal to working precision.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAX_EIG_SIZE: usize = 512;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `U · diag(f(λ)) · Uᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for r in 0..u.rows() {
            for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
                *v *= f(self.eigenvalues[c]);
            }
        }
        scaled
            .matmul_t(u)
            .expect("eigenvector matrix is square by construction")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.spectral_map(|l| l)
    }
}

pub fn sym_eig(m: &Matrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::shape(
            "sym_eig",
            format!("{}x{} is not square", m.rows(), m.cols()),
        ));
    }
    let n = m.rows();
    if n > MAX_EIG_SIZE {
        return Err(Error::invalid(format!(
            "sym_eig supports at most {MAX_EIG_SIZE} rows, got {n}"
        )));
    }
    m.ensure_finite("sym_eig input")?;
    let sym_tol = 1e-12 * m.max_abs().max(1.0);
    let asym = m.asymmetry();
    if asym > sym_tol {
        return Err(Error::shape(
            "sym_eig",
            format!("matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"),
        ));
    }

    // Work on the exactly symmetrised copy.
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);

    let mut converged = n <= 1;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Once past the first sweeps, drop entries below the diagonal's ulp.
                let negligible = 100.0 * apq.abs();
                if sweep > 3
                    && app.abs() + negligible == app.abs()
                    && aqq.abs() + negligible == aqq.abs()
                {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `A ← JᵀAJ`, `V ← VJ` for the rotation acting on coordinates `p`, `q`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
