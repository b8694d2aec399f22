//! Ground truth for the Gaussian AR(1) consumption-growth design.
//!
//! Two independent routes are provided: closed-form exponential-affine
//! eigenfunctions for power utility, and a Gauss-Hermite Nystrom
//! discretization of the population operators that also covers recursive
//! preferences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::sievemat::NonlinearMap;
use crate::valuefn::{self, FixedPointConfig, FixedPointSolution};

/// Log growth `g' - mu = kappa (g - mu) + sigma e`, `e ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Design {
    pub mu: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for Ar1Design {
    fn default() -> Self {
        Self::baseline()
    }
}

impl Ar1Design {
    pub fn new(mu: f64, kappa: f64, sigma: f64) -> Result<Self> {
        let d = Self { mu, kappa, sigma };
        d.validate()?;
        Ok(d)
    }

    /// Quarterly calibration used throughout the Monte Carlo study.
    pub fn baseline() -> Self {
        Self {
            mu: 0.005,
            kappa: 0.6,
            sigma: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "AR(1) persistence must satisfy |kappa| < 1, got {}",
                self.kappa
            )));
        }
        if !(self.sigma >= 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid AR(1) parameters mu = {}, sigma = {}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    pub fn stationary_var(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.kappa * self.kappa)
    }

    pub fn stationary_sd(&self) -> f64 {
        self.stationary_var().sqrt()
    }

    pub fn conditional_mean(&self, x: f64) -> f64 {
        self.mu + self.kappa * (x - self.mu)
    }

    /// `log f(y | x) - log f(y)` for the transition and stationary densities.
    pub fn log_density_ratio(&self, x: f64, y: f64) -> f64 {
        let s2 = self.stationary_var();
        let c = y - self.conditional_mean(x);
        let d = y - self.mu;
        -c * c / (2.0 * self.sigma * self.sigma) + d * d / (2.0 * s2)
            + 0.5 * (s2 / (self.sigma * self.sigma)).ln()
    }
}

/// Preferences generating the SDF: `m = beta G'^-gamma` for power utility, or the
/// unit-EIS recursive SDF with continuation values solved on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SdfSpec {
    Power { beta: f64, gamma: f64 },
    Recursive { beta: f64, gamma: f64 },
}

impl SdfSpec {
    pub fn beta(&self) -> f64 {
        match *self {
            SdfSpec::Power { beta, .. } | SdfSpec::Recursive { beta, .. } => beta,
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            SdfSpec::Power { gamma, .. } | SdfSpec::Recursive { gamma, .. } => gamma,
        }
    }
}

/// Closed-form power-utility solution: `phi(x) ~ exp(a (x - mu))`,
/// `phi*(x) ~ exp(b (x - mu))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AffineSolution {
    pub rho: f64,
    pub slope_a: f64,
    /// Slope of the time-reversed eigenfunction.
    pub slope_star: f64,
    /// `log rho - E log m`.
    pub entropy_l: f64,
    pub yield_y: f64,
    mu: f64,
    stationary_var: f64,
}

impl AffineSolution {
    /// `phi` scaled to unit second moment under the stationary law.
    pub fn phi(&self, x: f64) -> f64 {
        let a = self.slope_a;
        (a * (x - self.mu) - a * a * self.stationary_var).exp()
    }

    /// `phi*` scaled so that `E[phi phi*] = 1`.
    pub fn phi_star(&self, x: f64) -> f64 {
        let (a, b, s2) = (self.slope_a, self.slope_star, self.stationary_var);
        (b * (x - self.mu) + a * a * s2 - (a + b) * (a + b) * s2 / 2.0).exp()
    }
}

pub fn affine_power_utility_solution(design: &Ar1Design, beta: f64, gamma: f64) -> Result<AffineSolution> {
    design.validate()?;
    let Ar1Design { mu, kappa, sigma } = *design;
    let slope_star = -gamma / (1.0 - kappa);
    let slope_a = kappa * slope_star;
    let entropy_l = gamma * gamma * sigma * sigma / (2.0 * (1.0 - kappa).powi(2));
    let rho = beta * (-gamma * mu + entropy_l).exp();
    Ok(AffineSolution {
        rho,
        slope_a,
        slope_star,
        entropy_l,
        yield_y: -rho.ln(),
        mu,
        stationary_var: design.stationary_var(),
    })
}

/// Nodes and weights of the `q`-point Gauss-Hermite rule for the standard normal
/// (weights sum to one), ascending.
pub fn gauss_hermite(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    // roots of the physicists' polynomials by Newton's method on the orthonormal recurrence
    const PI_M4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let nf = q as f64;
    let mut z = 0.0f64;
    for i in 0..q.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PI_M4, 0.0);
            for j in 1..=q {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[q - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[q - 1 - i] = w[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| (xi * std::f64::consts::SQRT_2, wi / sqrt_pi))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nystrom discretization of the conditional expectation operator on
/// Gauss-Hermite nodes under the stationary law.
#[derive(Clone, Debug)]
pub struct QuadratureOperator {
    pub design: Ar1Design,
    /// State values `x_i`.
    pub nodes: Vec<f64>,
    /// Stationary weights, summing to one.
    pub weights: Vec<f64>,
    /// `K_ij = w_j f(x_j | x_i) / f(x_j)`; rows approximate `E[. | X = x_i]`.
    pub kernel: DMatrix<f64>,
}

impl QuadratureOperator {
    pub fn new(design: &Ar1Design, q: usize) -> Result<Self> {
        design.validate()?;
        if design.sigma == 0.0 {
            return Err(Error::InvalidArgument("quadrature needs sigma > 0".into()));
        }
        let (z, weights) = gauss_hermite(q);
        let s = design.stationary_sd();
        let nodes: Vec<f64> = z.iter().map(|zi| design.mu + s * zi).collect();
        let kernel = DMatrix::from_fn(q, q, |i, j| {
            weights[j] * design.log_density_ratio(nodes[i], nodes[j]).exp()
        });
        Ok(Self {
            design: *design,
            nodes,
            weights,
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E_Q[f g]` on the grid.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }
}

/// Population solution on the quadrature grid.
#[derive(Clone, Debug)]
pub struct QuadratureSolution {
    pub operator: QuadratureOperator,
    pub spec: SdfSpec,
    pub rho: f64,
    /// `phi` with unit second moment.
    pub phi: Vec<f64>,
    /// `phi*` with `E[phi phi*] = 1`.
    pub phi_star: Vec<f64>,
    /// Pricing kernel `K_ij m(x_i, x_j)`.
    pub pricing: DMatrix<f64>,
    pub lambda: Option<f64>,
    /// `chi` with unit second moment (recursive preferences only).
    pub chi: Option<Vec<f64>>,
    /// `rho` minus the modulus of the second eigenvalue, estimated during power iteration.
    pub second_ratio: f64,
}

impl QuadratureSolution {
    /// SDF `m(x, y)` implied by the specification.
    pub fn sdf(&self, x: f64, y: f64) -> f64 {
        match self.spec {
            SdfSpec::Power { beta, gamma } => beta * (-gamma * y).exp(),
            SdfSpec::Recursive { beta, gamma } => {
                let lambda = self.lambda.expect("recursive solution has lambda");
                beta / lambda * (-gamma * y).exp() * self.chi_at(y).powf(beta) / self.chi_at(x)
            }
        }
    }

    /// Nystrom extension of `chi` off the grid (recursive preferences only).
    pub fn chi_at(&self, x: f64) -> f64 {
        let chi = self.chi.as_ref().expect("recursive solution has chi");
        let lambda = self.lambda.expect("recursive solution has lambda");
        let (beta, gamma) = (self.spec.beta(), self.spec.gamma());
        let op = &self.operator;
        let mut acc = 0.0;
        for j in 0..op.len() {
            let k = op.weights[j] * op.design.log_density_ratio(x, op.nodes[j]).exp();
            acc += k * ((1.0 - gamma) * op.nodes[j]).exp() * chi[j].powf(beta);
        }
        acc / lambda
    }

    /// Nystrom extension of `phi`.
    pub fn phi_at(&self, x: f64) -> f64 {
        let op = &self.operator;
        let mut acc = 0.0;
        for j in 0..op.len() {
            let k = op.weights[j] * op.design.log_density_ratio(x, op.nodes[j]).exp();
            acc += k * self.sdf(x, op.nodes[j]) * self.phi[j];
        }
        acc / self.rho
    }

    /// Nystrom extension of `phi*`.
    pub fn phi_star_at(&self, y: f64) -> f64 {
        let op = &self.operator;
        let mut acc = 0.0;
        for i in 0..op.len() {
            let k = op.weights[i] * op.design.log_density_ratio(op.nodes[i], y).exp();
            acc += k * self.sdf(op.nodes[i], y) * self.phi_star[i];
        }
        acc / self.rho
    }

    pub fn yield_y(&self) -> f64 {
        -self.rho.ln()
    }

    /// `log rho - E[log m]` under the stationary law.
    pub fn entropy_l(&self) -> f64 {
        let op = &self.operator;
        let mut e_log_m = 0.0;
        for i in 0..op.len() {
            for j in 0..op.len() {
                e_log_m += op.weights[i] * op.kernel[(i, j)] * self.sdf(op.nodes[i], op.nodes[j]).ln();
            }
        }
        self.rho.ln() - e_log_m
    }
}

/// Leading eigenvalue and vector of a positive matrix by power iteration.
/// Returns `(eigenvalue, vector, estimated |second| / first)`.
fn perron(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, DVector<f64>, f64)> {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut prev_step = f64::NAN;
    let mut ratio = 0.0;
    for iteration in 1..=max_iter {
        let w = a * &v;
        let norm = w.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateIterate { iteration });
        }
        let next = w / norm;
        let step = (&next - &v).norm();
        if prev_step > 0.0 && step > 0.0 {
            ratio = step / prev_step;
        }
        prev_step = step;
        v = next;
        if step < tol {
            let value = v.dot(&(a * &v)) / v.dot(&v);
            return Ok((value, v, ratio));
        }
    }
    Err(Error::NoConvergence { iterations: max_iter })
}

/// Normalized `(rho, phi, phi*)` for a kernel matrix in the stationary metric.
fn pricing_eigen(op: &QuadratureOperator, pricing: &DMatrix<f64>) -> Result<(f64, Vec<f64>, Vec<f64>, f64)> {
    let (rho, right, ratio) = perron(pricing, 1e-15, 100_000)?;
    let (_, left, _) = perron(&pricing.transpose(), 1e-15, 100_000)?;
    let mut phi: Vec<f64> = right.iter().map(|v| v.abs()).collect();
    let scale = op.norm(&phi);
    phi.iter_mut().for_each(|v| *v /= scale);
    let mut phi_star: Vec<f64> = left
        .iter()
        .zip(&op.weights)
        .map(|(l, w)| l.abs() / w)
        .collect();
    let pairing = op.inner(&phi, &phi_star);
    phi_star.iter_mut().for_each(|v| *v /= pairing);
    Ok((rho, phi, phi_star, ratio))
}

/// Grid version of the continuation-value map `psi -> E[G'^(1-gamma) |psi(X')|^beta | X]`,
/// with the grid indicator functions as the "basis" and the stationary weights as Gram.
struct GridNonlinearMap<'a> {
    op: &'a QuadratureOperator,
    growth_weight: Vec<f64>,
    beta: f64,
}

impl NonlinearMap for GridNonlinearMap<'_> {
    fn dim(&self) -> usize {
        self.op.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        // coefficient space: the Gram matrix is diag(w), so return diag(w) * (T v)
        let q = self.op.len();
        let inner = DVector::from_fn(q, |j, _| self.growth_weight[j] * v[j].abs().powf(self.beta));
        let tv = &self.op.kernel * inner;
        DVector::from_fn(q, |i, _| self.op.weights[i] * tv[i])
    }
}

/// Dense population solution for the AR(1) design with `q` nodes.
pub fn quadrature_eig(design: &Ar1Design, spec: SdfSpec, q: usize) -> Result<QuadratureSolution> {
    if q < 40 {
        return Err(Error::InvalidArgument(format!(
            "quadrature needs at least 40 nodes, got {q}"
        )));
    }
    let op = QuadratureOperator::new(design, q)?;
    let (lambda, chi) = match spec {
        SdfSpec::Power { .. } => (None, None),
        SdfSpec::Recursive { beta, gamma } => {
            let gram = DMatrix::from_diagonal(&DVector::from_vec(op.weights.clone()));
            let mean_basis = DVector::from_vec(op.weights.clone());
            let map = GridNonlinearMap {
                op: &op,
                growth_weight: op.nodes.iter().map(|x| ((1.0 - gamma) * x).exp()).collect(),
                beta,
            };
            let cfg = FixedPointConfig {
                tol: 1e-13,
                max_iter: 100_000,
            };
            let sol = valuefn::iterate_fixed_point(&gram, &mean_basis, &map, beta, gamma, &cfg, None)?;
            if !sol.converged {
                return Err(Error::NoConvergence {
                    iterations: sol.iterations,
                });
            }
            (Some(sol.lambda), Some(sol.chi_coeffs.iter().copied().collect::<Vec<_>>()))
        }
    };
    let mut out = QuadratureSolution {
        pricing: DMatrix::zeros(q, q),
        operator: op,
        spec,
        rho: f64::NAN,
        phi: Vec::new(),
        phi_star: Vec::new(),
        lambda,
        chi,
        second_ratio: 0.0,
    };
    let nodes = out.operator.nodes.clone();
    let pricing = DMatrix::from_fn(q, q, |i, j| out.operator.kernel[(i, j)] * out.sdf(nodes[i], nodes[j]));
    let (rho, phi, phi_star, ratio) = pricing_eigen(&out.operator, &pricing)?;
    out.pricing = pricing;
    out.rho = rho;
    out.phi = phi;
    out.phi_star = phi_star;
    out.second_ratio = ratio;
    Ok(out)
}

/// `|rho^-t M^t psi - E[psi phi*] phi|` in the stationary norm for `t = 1..=horizon`.
pub fn long_run_errors(sol: &QuadratureSolution, psi: &[f64], horizon: usize) -> Vec<f64> {
    let op = &sol.operator;
    let projection = op.inner(psi, &sol.phi_star);
    let mut current = DVector::from_column_slice(psi);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        current = (&sol.pricing * current) / sol.rho;
        let diff: Vec<f64> = current
            .iter()
            .zip(&sol.phi)
            .map(|(c, p)| c - projection * p)
            .collect();
        out.push(op.norm(&diff));
    }
    out
}

/// Slope, intercept and R^2 of a least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy * sxy / (sxx * syy))
}

/// Two-dimensional Gauss-Hermite rule for `E[h(X, X')]` under the stationary
/// transition: `X = x_i` on the stationary rule, `X' = mu + kappa (x_i - mu) + sigma z_j`.
fn transition_rule(design: &Ar1Design, q: usize) -> Vec<(f64, f64, f64)> {
    let (z, w) = gauss_hermite(q);
    let s = design.stationary_sd();
    let mut out = Vec::with_capacity(q * q);
    for i in 0..q {
        let x = design.mu + s * z[i];
        for j in 0..q {
            let y = design.conditional_mean(x) + design.sigma * z[j];
            out.push((x, y, w[i] * w[j]));
        }
    }
    out
}

/// Population Gram matrix, pricing matrix and mean basis vector for `basis`
/// under the AR(1) law and SDF `m(x, y)`.
pub fn population_sieve_matrices(
    basis: &SieveBasis,
    design: &Ar1Design,
    sdf: &dyn Fn(f64, f64) -> f64,
    q: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    design.validate()?;
    let k = basis.dim();
    let (z, w) = gauss_hermite(q);
    let s = design.stationary_sd();
    let mut gram = DMatrix::zeros(k, k);
    let mut mean = DVector::zeros(k);
    for (zi, wi) in z.iter().zip(&w) {
        let b = basis.evaluate(&[design.mu + s * zi])?;
        gram += &b * b.transpose() * *wi;
        mean += &b * *wi;
    }
    let mut pricing = DMatrix::zeros(k, k);
    for (x, y, weight) in transition_rule(design, q) {
        let b0 = basis.evaluate(&[x])?;
        let b1 = basis.evaluate(&[y])?;
        pricing += b0 * b1.transpose() * (weight * sdf(x, y));
    }
    Ok((gram, pricing, mean))
}

/// Population continuation-value map `E[b(X) G'^(1-gamma) |b(X')'v|^beta]`.
pub struct PopulationNonlinearMap {
    b0: Vec<DVector<f64>>,
    b1: Vec<DVector<f64>>,
    factor: Vec<f64>,
    beta: f64,
    k: usize,
}

impl PopulationNonlinearMap {
    pub fn new(basis: &SieveBasis, design: &Ar1Design, beta: f64, gamma: f64, q: usize) -> Result<Self> {
        design.validate()?;
        let rule = transition_rule(design, q);
        let mut b0 = Vec::with_capacity(rule.len());
        let mut b1 = Vec::with_capacity(rule.len());
        let mut factor = Vec::with_capacity(rule.len());
        for (x, y, w) in rule {
            b0.push(basis.evaluate(&[x])?);
            b1.push(basis.evaluate(&[y])?);
            factor.push(w * ((1.0 - gamma) * y).exp());
        }
        Ok(Self {
            b0,
            b1,
            factor,
            beta,
            k: basis.dim(),
        })
    }
}

impl NonlinearMap for PopulationNonlinearMap {
    fn dim(&self) -> usize {
        self.k
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        for ((b0, b1), f) in self.b0.iter().zip(&self.b1).zip(&self.factor) {
            out += b0 * (f * b1.dot(v).abs().powf(self.beta));
        }
        out
    }
}

/// Fixed point of the population sieve problem, isolating solver error from sampling error.
pub fn population_fixed_point(
    basis: &SieveBasis,
    design: &Ar1Design,
    beta: f64,
    gamma: f64,
    q: usize,
    cfg: &FixedPointConfig,
) -> Result<FixedPointSolution> {
    let (gram, _, mean) = population_sieve_matrices(basis, design, &|_, _| 1.0, q)?;
    let map = PopulationNonlinearMap::new(basis, design, beta, gamma, q)?;
    valuefn::iterate_fixed_point(&gram, &mean, &map, beta, gamma, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stationary_hermite(d: &Ar1Design, degree: usize) -> SieveBasis {
        let scale = crate::basis::Standardization {
            mean: d.mu,
            sd: d.stationary_sd(),
        };
        crate::basis::hermite_basis_with(&[scale], degree).unwrap()
    }

    #[test]
    fn gauss_hermite_moments() {
        let (z, w) = gauss_hermite(20);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let moment = |p: i32| z.iter().zip(&w).map(|(x, wi)| wi * x.powi(p)).sum::<f64>();
        assert_abs_diff_eq!(moment(1), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(moment(2), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(moment(4), 3.0, epsilon = 1e-12);
        // exact through degree 2q - 1: E z^38 = 37!!
        let double_fact: f64 = (1..=37).step_by(2).map(|v| v as f64).product();
        assert!((moment(38) / double_fact - 1.0).abs() < 1e-10);
        assert!(z.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn gauss_hermite_three_point_rule() {
        let (z, w) = gauss_hermite(3);
        let r3 = 3f64.sqrt();
        assert_abs_diff_eq!(z[0], -r3, epsilon = 1e-14);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn affine_baseline_values() {
        let s = affine_power_utility_solution(&Ar1Design::baseline(), 0.994, 15.0).unwrap();
        assert_abs_diff_eq!(s.slope_a, -22.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.entropy_l, 0.0703125, epsilon = 1e-15);
        assert_abs_diff_eq!(s.rho, 0.994 * (-0.075f64 + 0.0703125).exp(), epsilon = 1e-15);
        assert!((s.rho - 0.98935).abs() < 5e-6);
    }

    #[test]
    fn affine_degenerate_cases() {
        let d = Ar1Design::baseline();
        let s = affine_power_utility_solution(&d, 0.9, 0.0).unwrap();
        assert_eq!((s.rho, s.slope_a, s.entropy_l), (0.9, 0.0, 0.0));
        let det = Ar1Design::new(0.005, 0.6, 0.0).unwrap();
        let s = affine_power_utility_solution(&det, 0.9, 10.0).unwrap();
        assert_abs_diff_eq!(s.rho, 0.9 * (-0.05f64).exp(), epsilon = 1e-15);
        assert!(Ar1Design::new(0.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let d = Ar1Design::baseline();
        let spec = SdfSpec::Power { beta: 0.994, gamma: 15.0 };
        let quad = quadrature_eig(&d, spec, 80).unwrap();
        let exact = affine_power_utility_solution(&d, 0.994, 15.0).unwrap();
        assert!((quad.rho / exact.rho - 1.0).abs() < 1e-6, "{} vs {}", quad.rho, exact.rho);
        let mid = quad.operator.len() / 2;
        for i in mid - 20..mid + 20 {
            let x = quad.operator.nodes[i];
            assert!((quad.phi[i] / exact.phi(x) - 1.0).abs() < 1e-6);
            assert!((quad.phi_star[i] / exact.phi_star(x) - 1.0).abs() < 1e-6);
        }
        assert!(quad.phi.iter().chain(&quad.phi_star).all(|v| *v > 0.0));
        assert_abs_diff_eq!(quad.operator.inner(&quad.phi, &quad.phi_star), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(quad.entropy_l(), exact.entropy_l, epsilon = 1e-8);
        // Nystrom extensions agree with the grid values
        let x = quad.operator.nodes[mid + 3];
        assert!((quad.phi_at(x) / quad.phi[mid + 3] - 1.0).abs() < 1e-10);
        assert!((quad.phi_star_at(x) / quad.phi_star[mid + 3] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn recursive_quadrature_is_stable_in_q() {
        let d = Ar1Design::baseline();
        let spec = SdfSpec::Recursive { beta: 0.994, gamma: 15.0 };
        let a = quadrature_eig(&d, spec, 60).unwrap();
        let b = quadrature_eig(&d, spec, 120).unwrap();
        assert!((a.lambda.unwrap() / b.lambda.unwrap() - 1.0).abs() < 1e-8);
        assert!((a.rho / b.rho - 1.0).abs() < 1e-8);
        let chi = b.chi.as_ref().unwrap();
        assert!(chi.iter().all(|v| *v > 0.0));
        assert_abs_diff_eq!(b.operator.norm(chi), 1.0, epsilon = 1e-12);
        // T chi = lambda chi on the grid
        let k = &b.operator.kernel;
        for i in 0..b.operator.len() {
            let tv: f64 = (0..b.operator.len())
                .map(|j| k[(i, j)] * ((1.0 - 15.0) * b.operator.nodes[j]).exp() * chi[j].powf(0.994))
                .sum();
            assert!((tv / (b.lambda.unwrap() * chi[i]) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_utility_recursion_is_power_utility() {
        let d = Ar1Design::baseline();
        let r = quadrature_eig(&d, SdfSpec::Recursive { beta: 0.99, gamma: 1.0 }, 60).unwrap();
        let p = quadrature_eig(&d, SdfSpec::Power { beta: 0.99, gamma: 1.0 }, 60).unwrap();
        assert_abs_diff_eq!(r.lambda.unwrap(), 1.0, epsilon = 1e-12);
        assert!((r.rho / p.rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_run_errors_decay_at_the_persistence_rate() {
        let d = Ar1Design::baseline();
        let quad = quadrature_eig(&d, SdfSpec::Power { beta: 0.994, gamma: 15.0 }, 80).unwrap();
        let psi = quad.operator.nodes.clone();
        let errs = long_run_errors(&quad, &psi, 40);
        let t: Vec<f64> = (1..=40).map(|v| v as f64).collect();
        let logs: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (slope, _, r2) = linear_fit(&t, &logs);
        assert!(r2 > 0.99, "r2 = {r2}");
        assert!((slope - 0.6f64.ln()).abs() < 0.01, "slope = {slope}");
    }

    #[test]
    fn population_matrices_reproduce_the_closed_form() {
        let d = Ar1Design::baseline();
        let basis = stationary_hermite(&d, 7);
        let (gram, pricing, mean) =
            population_sieve_matrices(&basis, &d, &|_, y| 0.994 * (-15.0 * y).exp(), 60).unwrap();
        let mats = crate::sievemat::SieveMatrices::from_parts(gram, pricing, mean, basis.constant_coefficients(), 0);
        let sol = crate::pfeig::solve(&mats).unwrap();
        let exact = affine_power_utility_solution(&d, 0.994, 15.0).unwrap();
        assert!((sol.rho / exact.rho - 1.0).abs() < 1e-3, "{}", sol.rho);
    }

    #[test]
    fn sieve_fixed_point_on_population_matrices_matches_the_grid() {
        let d = Ar1Design::baseline();
        let basis = stationary_hermite(&d, 7);
        let cfg = FixedPointConfig::default();
        let pop = population_fixed_point(&basis, &d, 0.994, 15.0, 60, &cfg).unwrap();
        assert!(pop.converged);
        let grid = quadrature_eig(&d, SdfSpec::Recursive { beta: 0.994, gamma: 15.0 }, 80).unwrap();
        assert!((pop.lambda / grid.lambda.unwrap() - 1.0).abs() < 1e-6, "{} vs {:?}", pop.lambda, grid.lambda);
    }
}
