//! Preference estimation from instrumented Euler equations with the
//! continuation value profiled out.
//!
//! For each candidate `(beta, gamma)` the value fixed point is solved on the
//! solve basis, the implied SDF `m_t` is formed and the pricing errors
//! `m_t R_{t+1} - 1` are instrumented with `b_I(X_t)`:
//!
//! `L_n = trace(A' G_I^+ A)`, `A = (1/n) sum b_I(X_t) (m_t R_{t+1} - 1)'`.
//!
//! Minimization is a coarse grid followed by Nelder-Mead in unit-box
//! coordinates.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SieveBasis};
use crate::decomp;
use crate::error::{Error, Result};
use crate::linalg;
use crate::pfeig;
use crate::sievemat::{BasisEvaluations, SieveMatrices, StatePanel};
use crate::valuefn::{self, FixedPointConfig, FixedPointSolution};

/// Singular values of the instrument Gram below this fraction of the largest are dropped.
pub const PINV_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceBounds {
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for PreferenceBounds {
    fn default() -> Self {
        Self {
            beta: (0.9, 0.9999),
            gamma: (1.0, 60.0),
        }
    }
}

impl PreferenceBounds {
    pub fn validate(&self) -> Result<()> {
        let (blo, bhi) = self.beta;
        let (glo, ghi) = self.gamma;
        if !(blo > 0.0 && bhi < 1.0 && blo <= bhi) {
            return Err(Error::InvalidArgument(format!(
                "beta bounds must satisfy 0 < lo <= hi < 1, got [{blo}, {bhi}]"
            )));
        }
        if !(glo >= 1.0 && glo <= ghi && ghi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma bounds must satisfy 1 <= lo <= hi, got [{glo}, {ghi}]"
            )));
        }
        Ok(())
    }

    fn to_params(&self, u: [f64; 2]) -> (f64, f64) {
        let u0 = u[0].clamp(0.0, 1.0);
        let u1 = u[1].clamp(0.0, 1.0);
        (
            self.beta.0 + u0 * (self.beta.1 - self.beta.0),
            self.gamma.0 + u1 * (self.gamma.1 - self.gamma.0),
        )
    }

    fn is_point(&self) -> bool {
        self.beta.0 == self.beta.1 && self.gamma.0 == self.gamma.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub grid_beta: usize,
    pub grid_gamma: usize,
    /// Simplex diameter (unit-box coordinates) at which Nelder-Mead stops.
    pub x_tol: f64,
    pub max_evals: usize,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let fp = FixedPointConfig::default();
        Self {
            grid_beta: 11,
            grid_gamma: 13,
            x_tol: 1e-7,
            max_evals: 500,
            fixed_point_tol: fp.tol,
            fixed_point_max_iter: fp.max_iter,
        }
    }
}

impl OptimizerConfig {
    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            tol: self.fixed_point_tol,
            max_iter: self.fixed_point_max_iter,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Grid,
    Simplex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub beta: f64,
    pub gamma: f64,
    /// `f64::INFINITY` when the inner problem failed.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub criterion_value: f64,
    pub inner_solution: FixedPointSolution,
    pub optimizer_trace: Vec<TraceEntry>,
    pub converged: bool,
}

/// Everything about the criterion that does not depend on `(beta, gamma)`.
pub struct CriterionData<'a> {
    solve_evals: BasisEvaluations,
    instruments: DMatrix<f64>,
    gram_pinv: DMatrix<f64>,
    growth: &'a [f64],
    returns: &'a DMatrix<f64>,
}

/// One criterion evaluation; `solution` is `None` when the value is infinite.
#[derive(Clone, Debug)]
pub struct CriterionEval {
    pub value: f64,
    pub solution: Option<FixedPointSolution>,
}

impl<'a> CriterionData<'a> {
    pub fn new(panel: &'a StatePanel, instrument_basis: &SieveBasis, solve_basis: &SieveBasis) -> Result<Self> {
        let returns = panel.returns()?;
        let growth = panel.growth()?;
        if instrument_basis.dim() > solve_basis.dim() {
            return Err(Error::InvalidArgument(format!(
                "instrument dimension {} exceeds solve dimension {}",
                instrument_basis.dim(),
                solve_basis.dim()
            )));
        }
        let solve_evals = BasisEvaluations::new(solve_basis, panel)?;
        let instruments = instrument_basis.design_matrix(panel.current())?;
        let n = panel.len() as f64;
        let gram = instruments.transpose() * &instruments / n;
        let gram_pinv = linalg::pseudo_inverse(&gram, PINV_REL_TOL);
        Ok(Self {
            solve_evals,
            instruments,
            gram_pinv,
            growth,
            returns,
        })
    }

    /// `trace(A' G_I^+ A)` for a given SDF series.
    pub fn quadratic_form(&self, m: &[f64]) -> f64 {
        let n = m.len();
        let mut resid = self.returns.clone();
        for t in 0..n {
            for j in 0..resid.ncols() {
                resid[(t, j)] = m[t] * resid[(t, j)] - 1.0;
            }
        }
        let a = self.instruments.transpose() * resid / n as f64;
        let quad = a.transpose() * &self.gram_pinv * &a;
        quad.trace().max(0.0)
    }

    pub fn evaluate(&self, beta: f64, gamma: f64, cfg: &FixedPointConfig) -> CriterionEval {
        let infeasible = CriterionEval {
            value: f64::INFINITY,
            solution: None,
        };
        let Ok(sol) = valuefn::solve_with_evaluations(&self.solve_evals, self.growth, beta, gamma, cfg) else {
            return infeasible;
        };
        if !sol.converged {
            return infeasible;
        }
        let Ok(m) = valuefn::sdf_from_evaluations(&self.solve_evals, self.growth, &sol) else {
            return infeasible;
        };
        let value = self.quadratic_form(&m);
        if !value.is_finite() {
            return infeasible;
        }
        CriterionEval {
            value,
            solution: Some(sol),
        }
    }
}

/// `L_n(beta, gamma)`; infinite when the profiled fixed point fails.
pub fn criterion(
    panel: &StatePanel,
    beta: f64,
    gamma: f64,
    instrument_basis: &SieveBasis,
    solve_basis: &SieveBasis,
    cfg: &FixedPointConfig,
) -> Result<f64> {
    let data = CriterionData::new(panel, instrument_basis, solve_basis)?;
    Ok(data.evaluate(beta, gamma, cfg).value)
}

fn grid_points(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

struct Simplex {
    points: [[f64; 2]; 3],
    values: [f64; 3],
}

impl Simplex {
    fn sort(&mut self) {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.map(|i| self.points[i]);
        self.values = idx.map(|i| self.values[i]);
    }

    fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in i + 1..3 {
                let dx = self.points[i][0] - self.points[j][0];
                let dy = self.points[i][1] - self.points[j][1];
                d = d.max(dx.hypot(dy));
            }
        }
        d
    }
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn along(from: [f64; 2], to: [f64; 2], t: f64) -> [f64; 2] {
    clamp_unit([from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])])
}

/// Grid search then Nelder-Mead; the returned point carries its profiled solution.
pub fn estimate_preferences(
    panel: &StatePanel,
    bounds: &PreferenceBounds,
    instrument_basis: &SieveBasis,
    solve_basis: &SieveBasis,
    cfg: &OptimizerConfig,
) -> Result<CalibrationResult> {
    bounds.validate()?;
    let data = CriterionData::new(panel, instrument_basis, solve_basis)?;
    let fp = cfg.fixed_point();

    let gb = grid_points(cfg.grid_beta);
    let gg = grid_points(cfg.grid_gamma);
    let cells: Vec<[f64; 2]> = if bounds.is_point() {
        vec![[0.0, 0.0]]
    } else {
        gb.iter().flat_map(|&u| gg.iter().map(move |&v| [u, v])).collect()
    };
    let grid_values: Vec<f64> = cells
        .par_iter()
        .map(|&u| {
            let (b, g) = bounds.to_params(u);
            data.evaluate(b, g, &fp).value
        })
        .collect();

    let mut trace: Vec<TraceEntry> = cells
        .iter()
        .zip(&grid_values)
        .map(|(&u, &value)| {
            let (beta, gamma) = bounds.to_params(u);
            TraceEntry {
                stage: Stage::Grid,
                beta,
                gamma,
                value,
            }
        })
        .collect();

    let best = (0..cells.len())
        .filter(|&i| grid_values[i].is_finite())
        .min_by(|&a, &b| grid_values[a].total_cmp(&grid_values[b]))
        .ok_or(Error::AllInfeasible)?;

    let (best_u, converged) = if bounds.is_point() {
        (cells[best], true)
    } else {
        let mut eval = |u: [f64; 2]| {
            let (beta, gamma) = bounds.to_params(u);
            let value = data.evaluate(beta, gamma, &fp).value;
            trace.push(TraceEntry {
                stage: Stage::Simplex,
                beta,
                gamma,
                value,
            });
            value
        };
        let step = [
            1.0 / (cfg.grid_beta.max(2) - 1) as f64,
            1.0 / (cfg.grid_gamma.max(2) - 1) as f64,
        ];
        nelder_mead(&mut eval, cells[best], grid_values[best], step, cfg)
    };

    let (beta_hat, gamma_hat) = bounds.to_params(best_u);
    let at_best = data.evaluate(beta_hat, gamma_hat, &fp);
    let inner_solution = at_best.solution.ok_or(Error::AllInfeasible)?;
    Ok(CalibrationResult {
        beta_hat,
        gamma_hat,
        criterion_value: at_best.value,
        inner_solution,
        optimizer_trace: trace,
        converged,
    })
}

/// Names of the values returned by [`calibrated_statistics`].
pub const CALIBRATED_STATISTICS: [&str; 6] = ["beta", "gamma", "rho", "y", "L", "horizon_dependence"];

/// Full empirical pipeline on one panel: fit both bases to the panel's
/// states, estimate `(beta, gamma)`, then decompose the implied SDF on the
/// solve basis. Bootstrap statistic for the preference table.
pub fn calibrated_statistics(
    panel: &StatePanel,
    bounds: &PreferenceBounds,
    instrument_spec: &BasisSpec,
    solve_spec: &BasisSpec,
    cfg: &OptimizerConfig,
) -> Result<Vec<f64>> {
    let instrument_basis = instrument_spec.build(panel.basis_data())?;
    let solve_basis = solve_spec.build(panel.basis_data())?;
    let fit = estimate_preferences(panel, bounds, &instrument_basis, &solve_basis, cfg)?;
    let evals = BasisEvaluations::new(&solve_basis, panel)?;
    let m = valuefn::sdf_from_evaluations(&evals, panel.growth()?, &fit.inner_solution)?;
    let mats = SieveMatrices::from_evaluations(&solve_basis, &evals, &m)?;
    let sol = pfeig::solve_normalized(&mats)?;
    let series = decomp::decompose(&sol, &solve_basis, panel, &m)?;
    Ok(vec![
        fit.beta_hat,
        fit.gamma_hat,
        series.rho,
        series.yield_y,
        series.entropy_l,
        series.horizon_dependence,
    ])
}

fn nelder_mead(
    f: &mut dyn FnMut([f64; 2]) -> f64,
    start: [f64; 2],
    start_value: f64,
    step: [f64; 2],
    cfg: &OptimizerConfig,
) -> ([f64; 2], bool) {
    // step inward so the initial simplex stays inside the box
    let toward = |x: f64, h: f64| if x + h <= 1.0 { x + h } else { x - h };
    let p1 = [toward(start[0], step[0]), start[1]];
    let p2 = [start[0], toward(start[1], step[1])];
    let mut s = Simplex {
        points: [start, p1, p2],
        values: [start_value, f(p1), f(p2)],
    };
    let mut evals = 2;
    loop {
        s.sort();
        if s.diameter() < cfg.x_tol {
            return (s.points[0], true);
        }
        if evals >= cfg.max_evals {
            return (s.points[0], false);
        }
        let centroid = [
            0.5 * (s.points[0][0] + s.points[1][0]),
            0.5 * (s.points[0][1] + s.points[1][1]),
        ];
        let worst = s.points[2];
        let reflected = along(centroid, worst, -1.0);
        let fr = f(reflected);
        evals += 1;
        if fr < s.values[0] {
            let expanded = along(centroid, worst, -2.0);
            let fe = f(expanded);
            evals += 1;
            if fe < fr {
                s.points[2] = expanded;
                s.values[2] = fe;
            } else {
                s.points[2] = reflected;
                s.values[2] = fr;
            }
            continue;
        }
        if fr < s.values[1] {
            s.points[2] = reflected;
            s.values[2] = fr;
            continue;
        }
        let (contracted, fc) = if fr < s.values[2] {
            let c = along(centroid, worst, -0.5);
            (c, f(c))
        } else {
            let c = along(centroid, worst, 0.5);
            (c, f(c))
        };
        evals += 1;
        if fc < s.values[2].min(fr) {
            s.points[2] = contracted;
            s.values[2] = fc;
            continue;
        }
        let best = s.points[0];
        for i in 1..3 {
            s.points[i] = along(best, s.points[i], 0.5);
            s.values[i] = f(s.points[i]);
            evals += 1;
        }
    }
}
