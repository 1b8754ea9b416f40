//! Small dense linear-algebra helpers shared by the fitting code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization with one retry after adding `1e-10 * trace / dim`
/// to the diagonal. A second failure is a hard error.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::not_pd(format!("{context} (non-finite entries)")));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs() / n as f64;
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| Error::not_pd(context))
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let chol = cholesky(m, context)?;
    let logdet = chol_logdet(&chol);
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, logdet))
}

pub fn spd_logdet(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    Ok(chol_logdet(&cholesky(m, context)?))
}

pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Frobenius inner product `tr(A^T B)`.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter().enumerate().all(|(idx, &v)| {
            let (r, c) = (idx % m.nrows(), idx / m.nrows());
            if r == c {
                v == 1.0
            } else {
                v == 0.0
            }
        })
}

/// `x^T A x` for symmetric `A`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}
