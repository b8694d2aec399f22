//! Monte Carlo harness for the AR(1) growth design: simulate, estimate,
//! and tabulate bias and RMSE against the oracle.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::decomp;
use crate::error::{Error, Result};
use crate::inference;
use crate::oracle::{self, Ar1Design, SdfSpec};
use crate::pfeig;
use crate::sievemat::{BasisEvaluations, SieveMatrices, StatePanel};
use crate::stats;
use crate::valuefn::{self, FixedPointConfig};

/// Preferences generating the simulated SDF.
pub type Preferences = SdfSpec;

/// Fallback share above which a table cell is flagged.
pub const FALLBACK_FLAG_RATE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub ar1: Ar1Design,
    pub preferences: Preferences,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub basis: BasisSpec,
    pub seed: u64,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
}

fn default_quad_nodes() -> usize {
    80
}

impl McDesign {
    /// `beta = 0.994`, `gamma = 15`, sample sizes 400 to 3200.
    pub fn baseline(recursive: bool, basis: BasisSpec, replications: usize, seed: u64) -> Self {
        let (beta, gamma) = (0.994, 15.0);
        Self {
            ar1: Ar1Design::baseline(),
            preferences: if recursive {
                SdfSpec::Recursive { beta, gamma }
            } else {
                SdfSpec::Power { beta, gamma }
            },
            sample_sizes: vec![400, 800, 1600, 3200],
            replications,
            basis,
            seed,
            quad_nodes: default_quad_nodes(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.ar1.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be positive".into()));
        }
        let k = match self.basis {
            BasisSpec::Hermite { degree } => degree + 1,
            BasisSpec::BSpline { k } => k,
            BasisSpec::Sparse { .. } => {
                return Err(Error::InvalidArgument(
                    "the AR(1) design has a scalar state; use a Hermite or B-spline basis".into(),
                ))
            }
        };
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 2 * k) {
            return Err(Error::InvalidArgument(format!(
                "sample size {n} is below twice the basis dimension {k}"
            )));
        }
        Ok(())
    }
}

/// `n + 1` states `X_0..X_n` with `X_0` from the stationary law.
pub fn simulate_ar1_path<R: Rng + ?Sized>(design: &Ar1Design, n: usize, rng: &mut R) -> Vec<f64> {
    let mut path = Vec::with_capacity(n + 1);
    let z: f64 = StandardNormal.sample(rng);
    path.push(design.mu + design.stationary_sd() * z);
    for t in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        path.push(design.conditional_mean(path[t]) + design.sigma * e);
    }
    path
}

/// Panel of `n` transitions with growth `G_{t+1} = exp(g_{t+1})`.
pub fn panel_from_path(path: &[f64]) -> Result<StatePanel> {
    let states = DMatrix::from_column_slice(path.len(), 1, path);
    let growth = path[1..].iter().map(|g| g.exp()).collect();
    StatePanel::from_series(&states)?.with_growth(growth)
}

pub fn simulate_ar1(design: &Ar1Design, n: usize, seed: u64) -> Result<StatePanel> {
    design.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one transition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    panel_from_path(&simulate_ar1_path(design, n, &mut rng))
}

/// `sqrt(sum w (f - g)^2 / sum w)`.
pub fn l2_distance(f: &[f64], g: &[f64], weights: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch { left: f.len(), right: g.len() });
    }
    if f.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    let ss: f64 = f
        .iter()
        .zip(g)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    Ok((ss / total).sqrt())
}

/// Population values the estimates are compared with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub rho: f64,
    pub yield_y: f64,
    pub entropy_l: f64,
    pub lambda: Option<f64>,
    /// Gauss-Hermite nodes under the stationary law and their weights.
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub chi: Option<Vec<f64>>,
}

pub fn design_truth(ar1: &Ar1Design, prefs: Preferences, q: usize) -> Result<Truth> {
    let quad = oracle::quadrature_eig(ar1, prefs, q)?;
    let grid = quad.operator.nodes.clone();
    let weights = quad.operator.weights.clone();
    match prefs {
        SdfSpec::Power { beta, gamma } => {
            let exact = oracle::affine_power_utility_solution(ar1, beta, gamma)?;
            Ok(Truth {
                rho: exact.rho,
                yield_y: exact.yield_y,
                entropy_l: exact.entropy_l,
                lambda: None,
                phi: grid.iter().map(|&x| exact.phi(x)).collect(),
                phi_star: grid.iter().map(|&x| exact.phi_star(x)).collect(),
                grid,
                weights,
                chi: None,
            })
        }
        SdfSpec::Recursive { .. } => Ok(Truth {
            rho: quad.rho,
            yield_y: quad.yield_y(),
            entropy_l: quad.entropy_l(),
            lambda: quad.lambda,
            phi: quad.phi.clone(),
            phi_star: quad.phi_star.clone(),
            chi: quad.chi.clone(),
            grid,
            weights,
        }),
    }
}

/// Estimates from one simulated sample; functions are evaluated on the truth grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub rho: f64,
    pub yield_y: f64,
    pub entropy_l: f64,
    /// Plug-in standard error of `rho`.
    pub se_rho: f64,
    pub lambda: Option<f64>,
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub chi: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReplicateOutcome {
    Estimate(ReplicateEstimate),
    /// The value fixed point converged but the pricing stage did not produce
    /// an estimate; `cause` is `Fallback` or `Failed`.
    ValueOnly {
        lambda: f64,
        chi: Vec<f64>,
        cause: Box<ReplicateOutcome>,
    },
    Fallback,
    NotConverged,
    Failed(String),
}

impl ReplicateOutcome {
    fn is_fallback(&self) -> bool {
        match self {
            ReplicateOutcome::Fallback => true,
            ReplicateOutcome::ValueOnly { cause, .. } => cause.is_fallback(),
            _ => false,
        }
    }

    fn is_failed(&self) -> bool {
        match self {
            ReplicateOutcome::Failed(_) => true,
            ReplicateOutcome::ValueOnly { cause, .. } => cause.is_failed(),
            _ => false,
        }
    }

    /// `(lambda, chi)` whenever the value fixed point converged.
    pub fn value_estimate(&self) -> Option<(f64, &Vec<f64>)> {
        match self {
            ReplicateOutcome::Estimate(ReplicateEstimate {
                lambda: Some(l),
                chi: Some(c),
                ..
            }) => Some((*l, c)),
            ReplicateOutcome::ValueOnly { lambda, chi, .. } => Some((*lambda, chi)),
            _ => None,
        }
    }
}

/// Runs the full estimation pipeline on one panel.
pub fn estimate_replicate(
    prefs: Preferences,
    basis_spec: &BasisSpec,
    panel: &StatePanel,
    grid: &[f64],
) -> ReplicateOutcome {
    match try_estimate(prefs, basis_spec, panel, grid) {
        Ok(outcome) => outcome,
        Err(e) => ReplicateOutcome::Failed(e.to_string()),
    }
}

fn try_estimate(
    prefs: Preferences,
    basis_spec: &BasisSpec,
    panel: &StatePanel,
    grid: &[f64],
) -> Result<ReplicateOutcome> {
    let basis = basis_spec.build(panel.basis_data())?;
    let evals = BasisEvaluations::new(&basis, panel)?;
    let growth = panel.growth()?;
    let grid_points = DMatrix::from_column_slice(grid.len(), 1, grid);
    let grid_design = basis.design_matrix(&grid_points)?;

    match prefs {
        SdfSpec::Power { beta, gamma } => {
            let m: Vec<f64> = growth.iter().map(|g| beta * (-gamma * g.ln()).exp()).collect();
            pricing_stage(&basis, &evals, &grid_design, &m, None, None)
        }
        SdfSpec::Recursive { beta, gamma } => {
            let fp = valuefn::solve_with_evaluations(&evals, growth, beta, gamma, &FixedPointConfig::default())?;
            if !fp.converged {
                return Ok(ReplicateOutcome::NotConverged);
            }
            let chi = (&grid_design * &fp.chi_coeffs).as_slice().to_vec();
            // lambda and chi stand on their own even when the implied SDF is unusable
            let rest = valuefn::sdf_from_evaluations(&evals, growth, &fp)
                .and_then(|m| pricing_stage(&basis, &evals, &grid_design, &m, Some(fp.lambda), Some(chi.clone())));
            Ok(match rest {
                Ok(ReplicateOutcome::Estimate(e)) => ReplicateOutcome::Estimate(e),
                Ok(other) => ReplicateOutcome::ValueOnly {
                    lambda: fp.lambda,
                    chi,
                    cause: Box::new(other),
                },
                Err(e) => ReplicateOutcome::ValueOnly {
                    lambda: fp.lambda,
                    chi,
                    cause: Box::new(ReplicateOutcome::Failed(e.to_string())),
                },
            })
        }
    }
}

fn pricing_stage(
    basis: &crate::basis::SieveBasis,
    evals: &BasisEvaluations,
    grid_design: &DMatrix<f64>,
    m: &[f64],
    lambda: Option<f64>,
    chi: Option<Vec<f64>>,
) -> Result<ReplicateOutcome> {
    let mats = SieveMatrices::from_evaluations(basis, evals, m)?;
    let sol = pfeig::solve_normalized(&mats)?;
    if sol.is_fallback {
        return Ok(ReplicateOutcome::Fallback);
    }
    let phi_t = evals.current.transpose() * &sol.right_coeffs;
    let phi_next = evals.next.transpose() * &sol.right_coeffs;
    let phi_star_t = evals.current.transpose() * &sol.left_coeffs;
    let infl = inference::influence_from_values(
        sol.rho,
        phi_t.as_slice(),
        phi_next.as_slice(),
        phi_star_t.as_slice(),
        m,
    )?;
    Ok(ReplicateOutcome::Estimate(ReplicateEstimate {
        rho: sol.rho,
        yield_y: decomp::long_run_yield(sol.rho)?,
        entropy_l: decomp::permanent_entropy(sol.rho, m)?,
        se_rho: infl.se_rho(),
        lambda,
        phi: (grid_design * &sol.right_coeffs).as_slice().to_vec(),
        phi_star: (grid_design * &sol.left_coeffs).as_slice().to_vec(),
        chi,
    }))
}

/// Generator for replicate `r` at sample-size index `size_idx`.
pub fn replicate_rng(seed: u64, size_idx: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size_idx as u64) << 32) | r as u64);
    rng
}

/// All replicates for one sample size, in replicate order.
pub fn run_replicates(design: &McDesign, truth: &Truth, size_idx: usize) -> Vec<ReplicateOutcome> {
    let n = design.sample_sizes[size_idx];
    (0..design.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(design.seed, size_idx, r);
            let path = simulate_ar1_path(&design.ar1, n, &mut rng);
            match panel_from_path(&path) {
                Ok(panel) => estimate_replicate(design.preferences, &design.basis, &panel, &truth.grid),
                Err(e) => ReplicateOutcome::Failed(e.to_string()),
            }
        })
        .collect()
}

/// One cell of the Monte Carlo table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub sample_size: usize,
    pub statistic: String,
    /// Scalar truth; `None` for function statistics.
    pub truth: Option<f64>,
    pub bias: f64,
    pub rmse: f64,
    /// Standard deviation of the estimates (scalars) or of the distances (functions).
    pub mc_sd: f64,
    /// Delta-method standard error of `rmse`.
    pub rmse_se: f64,
    /// Median plug-in standard error across replicates (`rho` only).
    pub median_se: Option<f64>,
    pub used: usize,
    pub fallback: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub design: McDesign,
    pub rows: Vec<McRow>,
    pub wall_seconds: f64,
}

impl McTable {
    pub fn get(&self, sample_size: usize, statistic: &str) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.sample_size == sample_size && r.statistic == statistic)
    }
}

struct Counts {
    used: usize,
    fallback: usize,
    not_converged: usize,
    failed: usize,
    flagged: bool,
}

fn scalar_row(n: usize, name: &str, truth: f64, est: &[f64], counts: &Counts, median_se: Option<f64>) -> McRow {
    let err: Vec<f64> = est.iter().map(|e| e - truth).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let mse = stats::mean(&sq);
    let rmse = mse.sqrt();
    McRow {
        sample_size: n,
        statistic: name.into(),
        truth: Some(truth),
        bias: stats::mean(&err),
        rmse,
        mc_sd: stats::sd(est),
        rmse_se: stats::sd(&sq) / (2.0 * rmse * (sq.len() as f64).sqrt()),
        median_se,
        used: counts.used,
        fallback: counts.fallback,
        not_converged: counts.not_converged,
        failed: counts.failed,
        flagged: counts.flagged,
    }
}

/// Function statistics: RMSE is the average per-replicate L2 distance, bias is the
/// distance of the pointwise-average estimate.
fn function_row(n: usize, name: &str, truth: &[f64], weights: &[f64], est: &[&Vec<f64>], counts: &Counts) -> Result<McRow> {
    let dists = est
        .iter()
        .map(|f| l2_distance(f, truth, weights))
        .collect::<Result<Vec<_>>>()?;
    let q = truth.len();
    let avg: Vec<f64> = (0..q)
        .map(|i| est.iter().map(|f| f[i]).sum::<f64>() / est.len() as f64)
        .collect();
    Ok(McRow {
        sample_size: n,
        statistic: name.into(),
        truth: None,
        bias: l2_distance(&avg, truth, weights)?,
        rmse: stats::mean(&dists),
        mc_sd: stats::sd(&dists),
        rmse_se: stats::sd(&dists) / (dists.len() as f64).sqrt(),
        median_se: None,
        used: counts.used,
        fallback: counts.fallback,
        not_converged: counts.not_converged,
        failed: counts.failed,
        flagged: counts.flagged,
    })
}

/// Bias/RMSE rows for one sample size.
pub fn summarize(n: usize, truth: &Truth, outcomes: &[ReplicateOutcome]) -> Result<Vec<McRow>> {
    let est: Vec<&ReplicateEstimate> = outcomes
        .iter()
        .filter_map(|o| match o {
            ReplicateOutcome::Estimate(e) => Some(e),
            _ => None,
        })
        .collect();
    let count = |f: fn(&ReplicateOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let fallback = count(|o| o.is_fallback());
    let counts = Counts {
        used: est.len(),
        fallback,
        not_converged: count(|o| matches!(o, ReplicateOutcome::NotConverged)),
        failed: count(|o| o.is_failed()),
        flagged: fallback as f64 > FALLBACK_FLAG_RATE * outcomes.len() as f64,
    };
    let values: Vec<(f64, &Vec<f64>)> = outcomes.iter().filter_map(|o| o.value_estimate()).collect();
    let value_counts = Counts {
        used: values.len(),
        fallback: 0,
        failed: count(|o| matches!(o, ReplicateOutcome::Failed(_))),
        ..counts
    };
    if est.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable replicates at n = {n}"
        )));
    }
    let pick = |f: fn(&ReplicateEstimate) -> f64| est.iter().map(|e| f(e)).collect::<Vec<f64>>();
    let mut rows = Vec::new();
    let mut ses = pick(|e| e.se_rho);
    ses.sort_by(|a, b| a.total_cmp(b));
    let median_se = stats::quantile_sorted(&ses, 0.5);
    if let (Some(lambda), false) = (truth.lambda, values.is_empty()) {
        let lambdas: Vec<f64> = values.iter().map(|v| v.0).collect();
        rows.push(scalar_row(n, "lambda", lambda, &lambdas, &value_counts, None));
        let chis: Vec<&Vec<f64>> = values.iter().map(|v| v.1).collect();
        if let Some(chi) = &truth.chi {
            rows.push(function_row(n, "chi", chi, &truth.weights, &chis, &value_counts)?);
        }
    }
    rows.push(scalar_row(n, "rho", truth.rho, &pick(|e| e.rho), &counts, Some(median_se)));
    rows.push(scalar_row(n, "y", truth.yield_y, &pick(|e| e.yield_y), &counts, None));
    rows.push(scalar_row(n, "L", truth.entropy_l, &pick(|e| e.entropy_l), &counts, None));
    let phis: Vec<&Vec<f64>> = est.iter().map(|e| &e.phi).collect();
    rows.push(function_row(n, "phi", &truth.phi, &truth.weights, &phis, &counts)?);
    let stars: Vec<&Vec<f64>> = est.iter().map(|e| &e.phi_star).collect();
    rows.push(function_row(n, "phi_star", &truth.phi_star, &truth.weights, &stars, &counts)?);
    Ok(rows)
}

pub fn run_mc_study(design: &McDesign) -> Result<McTable> {
    design.validate()?;
    let started = Instant::now();
    let truth = design_truth(&design.ar1, design.preferences, design.quad_nodes)?;
    let mut rows = Vec::new();
    for (idx, &n) in design.sample_sizes.iter().enumerate() {
        let outcomes = run_replicates(design, &truth, idx);
        rows.extend(summarize(n, &truth, &outcomes)?);
    }
    Ok(McTable {
        design: design.clone(),
        rows,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Bivariate Gaussian VAR(1) `X' - mu = A (X - mu) + e`; the first
/// coordinate is log consumption growth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Var1Design {
    pub mean: [f64; 2],
    pub transition: [[f64; 2]; 2],
    pub shock_sd: [f64; 2],
    pub shock_corr: f64,
}

/// Steps discarded before `X_0`.
pub const VAR_BURN_IN: usize = 1000;

impl Var1Design {
    /// Quarterly-scale growth with a persistent second state.
    pub fn baseline() -> Self {
        Self {
            mean: [0.005, 0.0],
            transition: [[0.3, 0.05], [0.0, 0.8]],
            shock_sd: [0.01, 0.02],
            shock_corr: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.transition;
        let tr = a + d;
        let det = a * d - b * c;
        let disc = tr * tr - 4.0 * det;
        let radius = if disc >= 0.0 {
            (0.5 * (tr.abs() + disc.sqrt())).abs()
        } else {
            det.sqrt()
        };
        if !(radius < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "VAR transition has spectral radius {radius}, need < 1"
            )));
        }
        if !(self.shock_sd.iter().all(|s| *s > 0.0) && self.shock_corr.abs() < 1.0) {
            return Err(Error::InvalidArgument("shock covariance must be positive definite".into()));
        }
        Ok(())
    }

    /// `(n + 1) x 2` states after a burn-in from the mean.
    pub fn simulate_path<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let [[a, b], [c, d]] = self.transition;
        let [s0, s1] = self.shock_sd;
        let off = (1.0 - self.shock_corr * self.shock_corr).sqrt();
        let mut x = [0.0f64; 2];
        let mut out = DMatrix::zeros(n + 1, 2);
        for t in 0..VAR_BURN_IN + n + 1 {
            if t >= VAR_BURN_IN {
                out[(t - VAR_BURN_IN, 0)] = self.mean[0] + x[0];
                out[(t - VAR_BURN_IN, 1)] = self.mean[1] + x[1];
            }
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = StandardNormal.sample(rng);
            let e0 = s0 * z0;
            let e1 = s1 * (self.shock_corr * z0 + off * z1);
            x = [a * x[0] + b * x[1] + e0, c * x[0] + d * x[1] + e1];
        }
        out
    }
}

/// Simulated panel whose returns price exactly under a known recursive SDF.
#[derive(Clone, Debug)]
pub struct CalibrationSample {
    pub states: DMatrix<f64>,
    /// Growth and `p` gross returns attached.
    pub panel: StatePanel,
    /// Generating SDF `m_t` from the sample fixed point at the true preferences.
    pub sdf: Vec<f64>,
}

/// Returns `R_{j,t+1} = eps_{j,t+1} / m_t` with independent lognormal
/// `eps` of mean one, so `E[m R | X_t] = 1` holds for every asset.
pub fn simulate_calibration_sample(
    design: &Var1Design,
    beta: f64,
    gamma: f64,
    solve_basis: &BasisSpec,
    n: usize,
    assets: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<CalibrationSample> {
    design.validate()?;
    if assets == 0 || !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument("need at least one asset and a non-negative noise level".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = design.simulate_path(n, &mut rng);
    let growth: Vec<f64> = (1..=n).map(|t| states[(t, 0)].exp()).collect();
    let panel = StatePanel::from_series(&states)?.with_growth(growth)?;
    let basis = solve_basis.build(&states)?;
    let sol = valuefn::solve_value_fixed_point(&basis, &panel, beta, gamma, &FixedPointConfig::default())?;
    if !sol.converged {
        return Err(Error::NoConvergence {
            iterations: sol.iterations,
        });
    }
    let sdf = valuefn::recursive_sdf_series(&panel, beta, gamma, &sol, &basis)?;
    let shift = 0.5 * noise_sd * noise_sd;
    let mut returns = DMatrix::zeros(n, assets);
    for t in 0..n {
        for j in 0..assets {
            let z: f64 = StandardNormal.sample(&mut rng);
            returns[(t, j)] = (noise_sd * z - shift).exp() / sdf[t];
        }
    }
    let panel = panel.with_returns(returns)?;
    Ok(CalibrationSample { states, panel, sdf })
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stationary_moments() {
        let d = Ar1Design::baseline();
        let panel = simulate_ar1(&d, 1_000_000, 42).unwrap();
        let g: Vec<f64> = panel.current().column(0).iter().copied().collect();
        assert!((stats::mean(&g) / 0.005 - 1.0).abs() < 0.01);
        assert!((stats::sample_variance(&g) / 1.5625e-4 - 1.0).abs() < 0.01);
        let lag: Vec<f64> = panel.next().column(0).iter().copied().collect();
        let r = stats::correlation(&g, &lag).unwrap();
        assert!((r - 0.6).abs() < 0.01);
    }

    #[test]
    fn zero_volatility_path_is_constant() {
        let d = Ar1Design::new(0.005, 0.6, 0.0).unwrap();
        let panel = simulate_ar1(&d, 50, 1).unwrap();
        assert!(panel.next().iter().all(|x| *x == 0.005));
        assert!(panel.growth().unwrap().iter().all(|g| (g - 0.005f64.exp()).abs() < 1e-15));
    }

    #[test]
    fn simulation_is_seeded() {
        let d = Ar1Design::baseline();
        let a = simulate_ar1(&d, 100, 7).unwrap();
        let b = simulate_ar1(&d, 100, 7).unwrap();
        assert_eq!(a.next(), b.next());
        assert_ne!(a.next(), simulate_ar1(&d, 100, 8).unwrap().next());
    }

    #[test]
    fn l2_distance_cases() {
        let w = [0.2, 0.3, 0.5];
        assert_eq!(l2_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &w).unwrap(), 0.0);
        assert_abs_diff_eq!(l2_distance(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0], &w).unwrap(), 0.5, epsilon = 1e-15);
        assert!(l2_distance(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
        // exact against Gauss-Hermite for polynomials: E[(z^2 - z)^2] = 3 + 1 = 4
        let (z, wz) = oracle::gauss_hermite(10);
        let f: Vec<f64> = z.iter().map(|x| x * x).collect();
        assert_abs_diff_eq!(l2_distance(&f, &z, &wz).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn small_study_is_deterministic_and_sane() {
        let mut design = McDesign::baseline(false, BasisSpec::Hermite { degree: 5 }, 24, 3);
        design.sample_sizes = vec![200, 800];
        let a = run_mc_study(&design).unwrap();
        let b = run_mc_study(&design).unwrap();
        assert_eq!(a.rows, b.rows);
        for row in &a.rows {
            assert!(row.rmse + 1e-15 >= row.bias.abs() || row.truth.is_none(), "{row:?}");
        }
        let r200 = a.get(200, "rho").unwrap();
        let r800 = a.get(800, "rho").unwrap();
        assert!(r800.rmse < r200.rmse);
        assert!(a.get(800, "phi").is_some());
    }

    #[test]
    fn recursive_replicate_runs() {
        let design = McDesign::baseline(true, BasisSpec::Hermite { degree: 7 }, 1, 5);
        let truth = design_truth(&design.ar1, design.preferences, 80).unwrap();
        let mut rng = replicate_rng(5, 0, 0);
        let panel = panel_from_path(&simulate_ar1_path(&design.ar1, 3200, &mut rng)).unwrap();
        match estimate_replicate(design.preferences, &design.basis, &panel, &truth.grid) {
            ReplicateOutcome::Estimate(e) => {
                assert!((e.lambda.unwrap() - truth.lambda.unwrap()).abs() < 0.05);
                assert!(e.chi.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sparse_basis_is_rejected_for_scalar_design() {
        let d = McDesign::baseline(false, BasisSpec::Sparse { degree: 4, cap: 5 }, 2, 1);
        assert!(run_mc_study(&d).is_err());
    }
}
