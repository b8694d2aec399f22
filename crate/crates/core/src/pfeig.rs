//! Perron-Frobenius eigenpairs of the sieve pricing problem.
//!
//! Solves `M c = rho G c` and `c*' M = rho c*' G` for the largest real
//! generalized eigenvalue. With `G = L L'` the pair reduces to the ordinary
//! problem for `A = L^-1 M L^-T`; right and left eigenvectors of `A` come from
//! the same singular value decomposition of `A - rho I`, so they are always
//! paired with the same eigenvalue.

use nalgebra::{DMatrix, DVector};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::linalg::{self, GramFactor};
use crate::sievemat::SieveMatrices;

/// Imaginary parts below `REALITY_TOL * (1 + |re|)` are treated as rounding noise.
pub const REALITY_TOL: f64 = 1e-8;
/// Eigenvalues closer than this (relative) to the selected one make it non-simple.
pub const SIMPLICITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSolution {
    pub rho: f64,
    pub right_coeffs: DVector<f64>,
    pub left_coeffs: DVector<f64>,
    /// The sample problem had no real, simple, positive leading eigenvalue and
    /// the solution is `rho = 1`, `phi = phi* = 1`.
    pub is_fallback: bool,
    /// `(|M c - rho G c|, |M' c* - rho G c*|)` for unit-length `c`, `c*`.
    pub residuals: (f64, f64),
    /// Distance from `rho` to the next largest real eigenvalue.
    pub spectral_gap: Option<f64>,
    /// Ridge added to the Gram matrix, if any.
    pub ridge: Option<f64>,
    pub normalized: bool,
}

impl EigenSolution {
    pub fn fallback(constant_coeffs: &DVector<f64>) -> Self {
        Self {
            rho: 1.0,
            right_coeffs: constant_coeffs.clone(),
            left_coeffs: constant_coeffs.clone(),
            is_fallback: true,
            residuals: (0.0, 0.0),
            spectral_gap: None,
            ridge: None,
            normalized: true,
        }
    }
}

fn unit_residual(m: &DMatrix<f64>, g: &DMatrix<f64>, rho: f64, c: &DVector<f64>) -> f64 {
    let u = c / c.norm();
    (m * &u - g * &u * rho).norm()
}

/// Solves the generalized problem for `(M, G)`, assuming the first basis function
/// is the constant when a fallback is needed.
pub fn solve_generalized(pricing: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<EigenSolution> {
    let mut e1 = DVector::zeros(gram.nrows());
    if !e1.is_empty() {
        e1[0] = 1.0;
    }
    solve_generalized_with_constant(pricing, gram, &e1)
}

/// Solves the generalized problem for sample sieve matrices.
pub fn solve(mats: &SieveMatrices) -> Result<EigenSolution> {
    solve_generalized_with_constant(&mats.pricing, &mats.gram, &mats.constant_coeffs)
}

pub fn solve_generalized_with_constant(
    pricing: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    constant_coeffs: &DVector<f64>,
) -> Result<EigenSolution> {
    let k = gram.nrows();
    if !gram.is_square() || pricing.shape() != gram.shape() {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: pricing.nrows(),
        });
    }
    if constant_coeffs.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: constant_coeffs.len(),
        });
    }
    if pricing.iter().chain(gram.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matrix entry".into()));
    }
    if !linalg::is_symmetric(gram, 1e-12) {
        return Err(Error::InvalidArgument("Gram matrix is not symmetric".into()));
    }

    let factor = GramFactor::new(gram)?;
    let l = factor.chol.l();
    // A = L^-1 M L^-T
    let x = l
        .solve_lower_triangular(pricing)
        .ok_or(Error::EigenFailure)?;
    let a = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::EigenFailure)?
        .transpose();

    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::EigenFailure)?;
    let eigs = schur.complex_eigenvalues();

    let is_real = |z: &nalgebra::Complex<f64>| z.im.abs() <= REALITY_TOL * (1.0 + z.re.abs());
    let selected = eigs
        .iter()
        .enumerate()
        .filter(|(_, z)| is_real(z) && z.re > 0.0)
        .max_by(|(_, p), (_, q)| p.re.total_cmp(&q.re));
    let Some((sel_idx, sel)) = selected else {
        return Ok(with_ridge(EigenSolution::fallback(constant_coeffs), factor.ridge));
    };
    let rho0 = sel.re;
    let simple = eigs.iter().enumerate().all(|(i, z)| {
        i == sel_idx || (z - nalgebra::Complex::new(rho0, 0.0)).norm() > SIMPLICITY_TOL * rho0.abs().max(1.0)
    });
    if !simple {
        return Ok(with_ridge(EigenSolution::fallback(constant_coeffs), factor.ridge));
    }
    let second_real = eigs
        .iter()
        .enumerate()
        .filter(|(i, z)| *i != sel_idx && is_real(z))
        .map(|(_, z)| z.re)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

    // Null vectors of A - rho I on both sides.
    let shifted = &a - DMatrix::identity(k, k) * rho0;
    let svd = shifted.svd(true, true);
    let imin = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(q.1))
        .map(|(i, _)| i)
        .ok_or(Error::EigenFailure)?;
    let w: DVector<f64> = svd.v_t.as_ref().ok_or(Error::EigenFailure)?.row(imin).transpose();
    let u: DVector<f64> = svd.u.as_ref().ok_or(Error::EigenFailure)?.column(imin).into_owned();

    // Two-sided Rayleigh quotient: second-order accurate and makes
    // c*'(M - rho G)c vanish up to rounding.
    let uw = u.dot(&w);
    let rho = if uw.abs() > 1e-12 {
        u.dot(&(&a * &w)) / uw
    } else {
        rho0
    };

    let lt = l.transpose();
    let c = lt.solve_upper_triangular(&w).ok_or(Error::EigenFailure)?;
    let c_star = lt.solve_upper_triangular(&u).ok_or(Error::EigenFailure)?;
    let residuals = (
        unit_residual(pricing, gram, rho, &c),
        unit_residual(&pricing.transpose(), gram, rho, &c_star),
    );
    Ok(EigenSolution {
        rho,
        right_coeffs: c,
        left_coeffs: c_star,
        is_fallback: false,
        residuals,
        spectral_gap: second_real.map(|s| (rho - s).abs()),
        ridge: factor.ridge,
        normalized: false,
    })
}

fn with_ridge(mut sol: EigenSolution, ridge: Option<f64>) -> EigenSolution {
    sol.ridge = ridge;
    sol
}

/// Scales `c` so that `c'Gc = 1` and `c*` so that `c*'Gc = 1`, then flips both
/// signs if the sample mean of `phi` (`mean_basis' c`) is negative.
pub fn normalize(
    sol: &EigenSolution,
    gram: &DMatrix<f64>,
    mean_basis: &DVector<f64>,
) -> Result<EigenSolution> {
    let mut out = sol.clone();
    if sol.is_fallback {
        out.normalized = true;
        return Ok(out);
    }
    let scale = linalg::g_norm(&sol.right_coeffs, gram);
    if !(scale > 0.0) {
        return Err(Error::DefectivePair);
    }
    let mut c = &sol.right_coeffs / scale;
    let gc = gram * &c;
    let pairing = sol.left_coeffs.dot(&gc);
    if !(pairing.abs() > 1e-14 * sol.left_coeffs.norm() * gc.norm()) {
        return Err(Error::DefectivePair);
    }
    let mut c_star = &sol.left_coeffs / pairing;
    if mean_basis.dot(&c) < 0.0 {
        c = -c;
        c_star = -c_star;
    }
    out.right_coeffs = c;
    out.left_coeffs = c_star;
    out.normalized = true;
    Ok(out)
}

/// Solves and normalizes in one step.
pub fn solve_normalized(mats: &SieveMatrices) -> Result<EigenSolution> {
    let sol = solve(mats)?;
    normalize(&sol, &mats.gram, &mats.mean_basis)
}

/// `(phi(x_i), phi*(x_i))` at each row of `points`.
pub fn eigenfunction_values(
    sol: &EigenSolution,
    basis: &SieveBasis,
    points: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if sol.is_fallback {
        return Ok((vec![1.0; points.nrows()], vec![1.0; points.nrows()]));
    }
    let x = basis.design_matrix(points)?;
    let phi = &x * &sol.right_coeffs;
    let phi_star = &x * &sol.left_coeffs;
    Ok((phi.as_slice().to_vec(), phi_star.as_slice().to_vec()))
}
