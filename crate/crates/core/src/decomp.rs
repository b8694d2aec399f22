//! Permanent/transitory factorization of SDF increments and the long-run
//! functionals built from the eigenpair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::pfeig::{self, EigenSolution};
use crate::sievemat::StatePanel;
use crate::stats;

/// Per-period increments `m = m_perm * m_trans` with the scalar functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompSeries {
    pub m: Vec<f64>,
    /// `m_t phi(X_{t+1}) / (rho phi(X_t))`, a martingale increment.
    pub m_perm: Vec<f64>,
    /// `rho phi(X_t) / phi(X_{t+1})`.
    pub m_trans: Vec<f64>,
    pub rho: f64,
    pub yield_y: f64,
    pub entropy_l: f64,
    pub sdf_entropy: f64,
    pub horizon_dependence: f64,
}

/// Covariance, correlation and rank correlations of `(log m_perm, log m_trans)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub cov_log: f64,
    pub corr_log: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
}

fn check_positive(what: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|v| !(*v > 0.0)) {
        Some(t) => Err(Error::NonPositive {
            what,
            t,
            value: xs[t],
        }),
        None => Ok(()),
    }
}

pub fn long_run_yield(rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::NonPositive {
            what: "eigenvalue",
            t: 0,
            value: rho,
        });
    }
    Ok(-rho.ln())
}

fn mean_log(m: &[f64]) -> f64 {
    let logs: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    stats::mean(&logs)
}

/// `log rho - mean(log m)`.
pub fn permanent_entropy(rho: f64, m: &[f64]) -> Result<f64> {
    long_run_yield(rho)?;
    check_positive("SDF increment", m)?;
    Ok(rho.ln() - mean_log(m))
}

/// `log mean(m) - mean(log m)`.
pub fn sdf_entropy(m: &[f64]) -> Result<f64> {
    check_positive("SDF increment", m)?;
    Ok(stats::mean(m).ln() - mean_log(m))
}

/// `phi * phi*` pointwise.
pub fn change_of_measure(phi: &[f64], phi_star: &[f64]) -> Vec<f64> {
    phi.iter().zip(phi_star).map(|(a, b)| a * b).collect()
}

pub fn pt_series(rho: f64, phi_t: &[f64], phi_next: &[f64], m: &[f64]) -> Result<DecompSeries> {
    let n = m.len();
    for len in [phi_t.len(), phi_next.len()] {
        if len != n {
            return Err(Error::LengthMismatch { left: n, right: len });
        }
    }
    long_run_yield(rho)?;
    for (t, (a, b)) in phi_t.iter().zip(phi_next).enumerate() {
        for value in [*a, *b] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveEigenfunction { t, value });
            }
        }
    }
    check_positive("SDF increment", m)?;
    let m_perm = (0..n).map(|t| m[t] * phi_next[t] / (rho * phi_t[t])).collect();
    let m_trans = (0..n).map(|t| rho * phi_t[t] / phi_next[t]).collect();
    let yield_y = -rho.ln();
    let entropy_l = rho.ln() - mean_log(m);
    let sdf_ent = sdf_entropy(m)?;
    Ok(DecompSeries {
        m: m.to_vec(),
        m_perm,
        m_trans,
        rho,
        yield_y,
        entropy_l,
        sdf_entropy: sdf_ent,
        horizon_dependence: entropy_l - sdf_ent,
    })
}

/// Evaluates `phi` along the panel and factors `m`.
pub fn decompose(sol: &EigenSolution, basis: &SieveBasis, panel: &StatePanel, m: &[f64]) -> Result<DecompSeries> {
    let (phi_t, _) = pfeig::eigenfunction_values(sol, basis, panel.current())?;
    let (phi_next, _) = pfeig::eigenfunction_values(sol, basis, panel.next())?;
    pt_series(sol.rho, &phi_t, &phi_next, m)
}

pub fn pt_association(series: &DecompSeries) -> Result<Association> {
    let n = series.m_perm.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "association needs at least 3 periods, got {n}"
        )));
    }
    let lp: Vec<f64> = series.m_perm.iter().map(|v| v.ln()).collect();
    let lt: Vec<f64> = series.m_trans.iter().map(|v| v.ln()).collect();
    Ok(Association {
        cov_log: stats::covariance(&lp, &lt),
        corr_log: stats::correlation(&lp, &lt),
        kendall_tau: stats::kendall_tau(&lp, &lt),
        spearman_rho: stats::spearman(&lp, &lt),
    })
}

/// `phi`, `phi*` and their product on user-supplied points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenGrid {
    pub points: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn eigenfunction_grid(sol: &EigenSolution, basis: &SieveBasis, points: &DMatrix<f64>) -> Result<EigenGrid> {
    let (phi, phi_star) = pfeig::eigenfunction_values(sol, basis, points)?;
    let density = change_of_measure(&phi, &phi_star);
    let rows = (0..points.nrows())
        .map(|i| points.row(i).iter().copied().collect())
        .collect();
    Ok(EigenGrid {
        points: rows,
        phi,
        phi_star,
        density,
    })
}
