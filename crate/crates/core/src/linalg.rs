//! Dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative ridge applied once when a Gram matrix fails Cholesky.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Cholesky factor of a Gram matrix, retried once with `eps * I` where
/// `eps = 1e-10 * trace / k`.
pub struct GramFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub ridge: Option<f64>,
}

impl GramFactor {
    pub fn new(gram: &DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = Cholesky::new(gram.clone()) {
            return Ok(Self { chol, ridge: None });
        }
        let k = gram.nrows().max(1) as f64;
        let eps = RIDGE_SCALE * gram.trace() / k;
        let ridged = gram + DMatrix::identity(gram.nrows(), gram.ncols()) * eps;
        match Cholesky::new(ridged) {
            Some(chol) if eps > 0.0 => Ok(Self {
                chol,
                ridge: Some(eps),
            }),
            _ => Err(Error::NotPositiveDefinite { ridge: eps }),
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// The (possibly ridged) matrix that was factored.
    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

/// `sqrt(v' G v)`.
pub fn g_norm(v: &DVector<f64>, gram: &DMatrix<f64>) -> f64 {
    (v.dot(&(gram * v))).max(0.0).sqrt()
}

pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= rel_tol * scale))
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when singular).
pub fn condition_estimate(sym: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore-Penrose pseudo-inverse, truncating singular values below `rel_tol * sigma_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rel_tol * smax;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V'");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (vt.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}
