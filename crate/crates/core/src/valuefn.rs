//! Continuation values under unit-EIS recursive preferences as the positive
//! eigenfunction of the nonlinear map `T psi = E[G^(1-gamma) |psi(X')|^beta | X]`.
//!
//! The sieve problem `G^-1 T v = v` is solved with a normalized iteration:
//! start from `z_1 = G^-1 mean(b(X_t))`, set `y_j = z_j / |z_j|_G` and
//! `z_{j+1} = G^-1 T y_j`. At the limit `(y, z)`, `chi = b'y`,
//! `lambda = |z|_G` and `h = lambda^(1/(1-beta)) chi`.

use nalgebra::{DMatrix, DVector};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::linalg::{self, GramFactor};
use crate::sievemat::{BasisEvaluations, NonlinearMap, SampleNonlinearMap, StatePanel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointConfig {
    /// Stop when successive normalized iterates differ by less than this in the Gram norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointSolution {
    pub lambda: f64,
    /// `chi = b'y`, unit empirical norm.
    pub chi_coeffs: DVector<f64>,
    /// `h = lambda^(1/(1-beta)) chi`.
    pub h_coeffs: DVector<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gram-norm change between the last two normalized iterates.
    pub final_step: f64,
}

impl FixedPointSolution {
    /// `|G^-1 T(h) - h|_G / |h|_G`.
    pub fn relative_residual(&self, gram: &DMatrix<f64>, map: &dyn NonlinearMap) -> Result<f64> {
        let factor = GramFactor::new(gram)?;
        let image = factor.solve(&map.apply(&self.h_coeffs));
        let h_norm = linalg::g_norm(&self.h_coeffs, gram);
        Ok(linalg::g_norm(&(image - &self.h_coeffs), gram) / h_norm)
    }

    /// `|T(y) - lambda G y|_{G^-1} / lambda`, the sample eigen relation for `chi`.
    pub fn eigen_defect(&self, gram: &DMatrix<f64>, map: &dyn NonlinearMap) -> Result<f64> {
        let factor = GramFactor::new(gram)?;
        let z = factor.solve(&map.apply(&self.chi_coeffs));
        Ok(linalg::g_norm(&(z - &self.chi_coeffs * self.lambda), gram) / self.lambda)
    }
}

fn check_preferences(beta: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be at least 1, got {gamma}"
        )));
    }
    Ok(())
}

/// Runs the normalized iteration for any map `T` on coefficient vectors.
///
/// `start` defaults to `G^-1 mean_basis`, the coefficients of the constant function.
pub fn iterate_fixed_point(
    gram: &DMatrix<f64>,
    mean_basis: &DVector<f64>,
    map: &dyn NonlinearMap,
    beta: f64,
    gamma: f64,
    cfg: &FixedPointConfig,
    start: Option<&DVector<f64>>,
) -> Result<FixedPointSolution> {
    check_preferences(beta, gamma)?;
    let factor = GramFactor::new(gram)?;
    let mut z = match start {
        Some(s) => s.clone(),
        None => factor.solve(mean_basis),
    };
    let unit = |z: &DVector<f64>, iteration: usize| -> Result<(DVector<f64>, f64)> {
        let nz = linalg::g_norm(z, gram);
        if !(nz.is_finite() && nz > f64::MIN_POSITIVE * 1e10) {
            return Err(Error::DegenerateIterate { iteration });
        }
        Ok((z / nz, nz))
    };

    let (mut y, mut z_norm) = unit(&z, 1)?;
    let mut iterations = 1;
    let mut step = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iter.max(2) {
        z = factor.solve(&map.apply(&y));
        iterations += 1;
        let (y_next, nz) = unit(&z, iterations)?;
        step = linalg::g_norm(&(&y_next - &y), gram);
        y = y_next;
        z_norm = nz;
        if step < cfg.tol {
            converged = true;
            break;
        }
    }

    if mean_basis.dot(&y) < 0.0 {
        y = -y;
    }
    let lambda = z_norm;
    let h_coeffs = &y * lambda.powf(1.0 / (1.0 - beta));
    Ok(FixedPointSolution {
        lambda,
        chi_coeffs: y,
        h_coeffs,
        beta,
        gamma,
        iterations,
        converged,
        final_step: step,
    })
}

/// Fixed point from precomputed basis evaluations.
pub fn solve_with_evaluations(
    evals: &BasisEvaluations,
    growth: &[f64],
    beta: f64,
    gamma: f64,
    cfg: &FixedPointConfig,
) -> Result<FixedPointSolution> {
    check_preferences(beta, gamma)?;
    let map = SampleNonlinearMap::new(evals, growth, beta, gamma)?;
    iterate_fixed_point(&evals.gram(), &evals.mean_basis(), &map, beta, gamma, cfg, None)
}

/// Solves `G^-1 T v = v` on the panel's sample.
pub fn solve_value_fixed_point(
    basis: &SieveBasis,
    panel: &StatePanel,
    beta: f64,
    gamma: f64,
    cfg: &FixedPointConfig,
) -> Result<FixedPointSolution> {
    let evals = BasisEvaluations::new(basis, panel)?;
    solve_with_evaluations(&evals, panel.growth()?, beta, gamma, cfg)
}

/// `m_t = (beta / lambda) G_{t+1}^-gamma chi(X_{t+1})^beta / chi(X_t)` from evaluations.
pub fn sdf_from_evaluations(
    evals: &BasisEvaluations,
    growth: &[f64],
    sol: &FixedPointSolution,
) -> Result<Vec<f64>> {
    if growth.len() != evals.n() {
        return Err(Error::LengthMismatch {
            left: evals.n(),
            right: growth.len(),
        });
    }
    let chi0 = evals.current.transpose() * &sol.chi_coeffs;
    let chi1 = evals.next.transpose() * &sol.chi_coeffs;
    let scale = sol.beta / sol.lambda;
    (0..evals.n())
        .map(|t| {
            for value in [chi0[t], chi1[t]] {
                if !(value > 0.0) {
                    return Err(Error::NonPositiveEigenfunction { t, value });
                }
            }
            Ok(scale * (-sol.gamma * growth[t].ln()).exp() * chi1[t].powf(sol.beta) / chi0[t])
        })
        .collect()
}

/// The recursive-preference SDF series implied by a fixed-point solution.
pub fn recursive_sdf_series(
    panel: &StatePanel,
    beta: f64,
    gamma: f64,
    solution: &FixedPointSolution,
    basis: &SieveBasis,
) -> Result<Vec<f64>> {
    if solution.beta != beta || solution.gamma != gamma {
        return Err(Error::InvalidArgument(format!(
            "solution was computed for (beta, gamma) = ({}, {}), not ({beta}, {gamma})",
            solution.beta, solution.gamma
        )));
    }
    let evals = BasisEvaluations::new(basis, panel)?;
    sdf_from_evaluations(&evals, panel.growth()?, solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_hermite_basis;
    use approx::assert_abs_diff_eq;

    fn ar1_panel(n: usize, seed: u64) -> (DMatrix<f64>, StatePanel) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = vec![0.005];
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let last = *g.last().unwrap();
            g.push(0.005 + 0.6 * (last - 0.005) + 0.01 * e);
        }
        let states = DMatrix::from_column_slice(n + 1, 1, &g);
        let growth = g[1..].iter().map(|x| x.exp()).collect();
        let panel = StatePanel::from_series(&states).unwrap().with_growth(growth).unwrap();
        (states, panel)
    }

    #[test]
    fn log_utility_is_trivial() {
        let (states, panel) = ar1_panel(300, 1);
        let b = build_hermite_basis(&states, 5).unwrap();
        let sol = solve_value_fixed_point(&b, &panel, 0.994, 1.0, &FixedPointConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        assert_abs_diff_eq!(sol.lambda, 1.0, epsilon = 1e-12);
        let chi = b.design_matrix(panel.current()).unwrap() * &sol.chi_coeffs;
        assert!(chi.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let m = recursive_sdf_series(&panel, 0.994, 1.0, &sol, &b).unwrap();
        for (mt, g) in m.iter().zip(panel.growth().unwrap()) {
            assert_abs_diff_eq!(*mt, 0.994 / g, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_growth_closed_form() {
        let (states, panel) = ar1_panel(200, 2);
        let g = 1.013;
        let panel = StatePanel::from_transitions(panel.current().clone(), panel.next().clone())
            .unwrap()
            .with_growth(vec![g; 200])
            .unwrap();
        let b = build_hermite_basis(&states, 4).unwrap();
        let sol = solve_value_fixed_point(&b, &panel, 0.97, 12.0, &FixedPointConfig::default()).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.lambda, g.powf(1.0 - 12.0), epsilon = 1e-12);
        let m = recursive_sdf_series(&panel, 0.97, 12.0, &sol, &b).unwrap();
        assert!(m.iter().all(|v| (v - 0.97 / g).abs() < 1e-12));
    }

    #[test]
    fn converged_solution_satisfies_the_fixed_point() {
        let (states, panel) = ar1_panel(800, 3);
        let b = build_hermite_basis(&states, 7).unwrap();
        let cfg = FixedPointConfig::default();
        let sol = solve_value_fixed_point(&b, &panel, 0.994, 15.0, &cfg).unwrap();
        assert!(sol.converged, "{sol:?}");
        let evals = BasisEvaluations::new(&b, &panel).unwrap();
        let gram = evals.gram();
        let map = SampleNonlinearMap::new(&evals, panel.growth().unwrap(), 0.994, 15.0).unwrap();
        assert_abs_diff_eq!(linalg::g_norm(&sol.chi_coeffs, &gram), 1.0, epsilon = 1e-12);
        assert!(sol.relative_residual(&gram, &map).unwrap() < 1e-8);
        assert!(sol.eigen_defect(&gram, &map).unwrap() < 1e-8);
        let ratio = &sol.h_coeffs.component_div(&sol.chi_coeffs);
        let expected = sol.lambda.powf(1.0 / (1.0 - 0.994));
        assert!(ratio.iter().all(|r| (r / expected - 1.0).abs() < 1e-12));
    }

    #[test]
    fn start_scale_does_not_matter() {
        let (states, panel) = ar1_panel(400, 4);
        let b = build_hermite_basis(&states, 5).unwrap();
        let evals = BasisEvaluations::new(&b, &panel).unwrap();
        let gram = evals.gram();
        let mb = evals.mean_basis();
        let map = SampleNonlinearMap::new(&evals, panel.growth().unwrap(), 0.99, 10.0).unwrap();
        let cfg = FixedPointConfig::default();
        let z1 = GramFactor::new(&gram).unwrap().solve(&mb);
        let base = iterate_fixed_point(&gram, &mb, &map, 0.99, 10.0, &cfg, Some(&z1)).unwrap();
        // power-of-two scaling is exact in floating point
        let pow2 = iterate_fixed_point(&gram, &mb, &map, 0.99, 10.0, &cfg, Some(&(&z1 * 8.0))).unwrap();
        assert_eq!(base, pow2);
        let odd = iterate_fixed_point(&gram, &mb, &map, 0.99, 10.0, &cfg, Some(&(&z1 * 3.3))).unwrap();
        assert_abs_diff_eq!(base.lambda, odd.lambda, epsilon = 1e-14);
        assert!((&base.chi_coeffs - &odd.chi_coeffs).amax() < 1e-12);
    }

    #[test]
    fn zero_start_is_degenerate() {
        let (states, panel) = ar1_panel(100, 5);
        let b = build_hermite_basis(&states, 3).unwrap();
        let evals = BasisEvaluations::new(&b, &panel).unwrap();
        let map = SampleNonlinearMap::new(&evals, panel.growth().unwrap(), 0.9, 5.0).unwrap();
        let zero = DVector::zeros(4);
        let r = iterate_fixed_point(
            &evals.gram(),
            &evals.mean_basis(),
            &map,
            0.9,
            5.0,
            &FixedPointConfig::default(),
            Some(&zero),
        );
        assert!(matches!(r, Err(Error::DegenerateIterate { iteration: 1 })));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (states, panel) = ar1_panel(300, 6);
        let b = build_hermite_basis(&states, 5).unwrap();
        let cfg = FixedPointConfig { tol: 1e-10, max_iter: 3 };
        let sol = solve_value_fixed_point(&b, &panel, 0.994, 15.0, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
    }

    #[test]
    fn bad_preferences_are_rejected() {
        let (states, panel) = ar1_panel(50, 7);
        let b = build_hermite_basis(&states, 2).unwrap();
        let cfg = FixedPointConfig::default();
        assert!(solve_value_fixed_point(&b, &panel, 1.0, 5.0, &cfg).is_err());
        assert!(solve_value_fixed_point(&b, &panel, 0.9, 0.5, &cfg).is_err());
    }

    #[test]
    fn non_positive_chi_is_reported() {
        let (states, panel) = ar1_panel(50, 8);
        let b = build_hermite_basis(&states, 2).unwrap();
        let sol = FixedPointSolution {
            lambda: 1.0,
            chi_coeffs: DVector::from_vec(vec![0.0, 1.0, 0.0]),
            h_coeffs: DVector::from_vec(vec![0.0, 1.0, 0.0]),
            beta: 0.9,
            gamma: 5.0,
            iterations: 1,
            converged: true,
            final_step: 0.0,
        };
        assert!(matches!(
            recursive_sdf_series(&panel, 0.9, 5.0, &sol, &b),
            Err(Error::NonPositiveEigenfunction { .. })
        ));
    }
}
