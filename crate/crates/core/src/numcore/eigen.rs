//! Cyclic Jacobi eigensolver for dense symmetric matrices.
//!
//! Each sweep visits every off-diagonal pair `(p, q)` once and applies the
//! plane rotation that annihilates `a[p][q]`. Eigenvectors accumulate as the
//! product of the rotations, so they stay orthonormal to rounding error.

use crate::error::{Error, Result};
use crate::numcore::Matrix;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// Returns `‖A·φ_i − λ_i·φ_i‖₂` for pair `i`.
    pub fn residual(&self, a: &Matrix, i: usize) -> f64 {
        let n = a.rows();
        let lambda = self.eigenvalues[i];
        let mut acc = 0.0;
        for r in 0..n {
            let mut av = 0.0;
            for c in 0..n {
                av += a[(r, c)] * self.eigenvectors[(c, i)];
            }
            let d = av - lambda * self.eigenvectors[(r, i)];
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Iterates until the off-diagonal Frobenius norm drops below
/// `tol · ‖A‖_F`. Fails with [`Error::NoConvergence`] after 100 sweeps.
pub fn eigh_symmetric(a: &Matrix, tol: f64) -> Result<EigenDecomposition> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid(format!(
            "eigh_symmetric needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("eigh_symmetric tolerance must be positive"));
    }
    if !a.is_finite() {
        return Err(Error::invalid(
            "eigh_symmetric input has non-finite entries",
        ));
    }
    let scale = a.data().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if !a.is_symmetric(1e-10 * scale) {
        return Err(Error::invalid("eigh_symmetric input is not symmetric"));
    }

    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let target = tol * a.frobenius_norm();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&w);
        if off <= target || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| w[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(w: &Matrix) -> f64 {
    let n = w.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * w[(i, j)] * w[(i, j)];
        }
    }
    acc.sqrt()
}

/// `W ← Jᵀ W J`, `V ← V J` with `J` the (p, q) rotation `[[c, s], [−s, c]]`.
fn rotate(w: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = w.rows();
    for k in 0..n {
        let wkp = w[(k, p)];
        let wkq = w[(k, q)];
        w[(k, p)] = c * wkp - s * wkq;
        w[(k, q)] = s * wkp + c * wkq;
    }
    for k in 0..n {
        let wpk = w[(p, k)];
        let wqk = w[(q, k)];
        w[(p, k)] = c * wpk - s * wqk;
        w[(q, k)] = s * wpk + c * wqk;
    }
    w[(p, q)] = 0.0;
    w[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
