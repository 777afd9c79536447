//! Numeric substrate: dense matrices, a matrix-level autodiff tape, the
//! Jacobi eigensolver, Adam, and a finite-difference gradient checker.

mod adam;
mod eigen;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use eigen::{eigh_symmetric, EigenDecomposition};
pub use matrix::Matrix;
pub use params::{glorot, Bound, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};

pub(crate) use tape::elu;

use crate::error::{Error, Result};

/// Row softmax result. Rows listed in `empty_rows` had no unmasked entry and
/// were set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    pub values: Matrix,
    pub empty_rows: Vec<usize>,
}

/// Numerically stable row softmax. `mask[i][j] == false` excludes entry
/// `(i, j)`, which is then exactly zero.
pub fn softmax_rows(m: &Matrix, mask: Option<&[Vec<bool>]>) -> SoftmaxOutput {
    let mut values = Matrix::zeros(m.rows(), m.cols());
    let mut empty_rows = Vec::new();
    for i in 0..m.rows() {
        let keep = |j: usize| mask.is_none_or(|mk| mk[i][j]);
        let row = m.row(i);
        let max = (0..m.cols())
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            empty_rows.push(i);
            continue;
        }
        let out = values.row_mut(i);
        let mut total = 0.0;
        for j in 0..row.len() {
            if keep(j) {
                out[j] = (row[j] - max).exp();
                total += out[j];
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
    }
    SoftmaxOutput { values, empty_rows }
}

/// Compares an analytic gradient to central differences.
///
/// `f` returns the function value and its analytic gradient at a point.
/// The result is `max_i |g_i − (f(θ+h·e_i) − f(θ−h·e_i))/2h| / max(1, |g_i|)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(h > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let (value, analytic) = f(theta);
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!("f(θ) = {value}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::invalid("analytic gradient length mismatch"));
    }
    let mut point = theta.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let (plus, _) = f(&point);
        point[i] = theta[i] - h;
        let (minus, _) = f(&point);
        point[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite value at coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
