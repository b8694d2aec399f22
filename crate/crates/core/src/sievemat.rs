//! Sample sieve matrices: the Gram matrix, the pricing matrix and the
//! nonlinear continuation-value map, all built from transitions `(X_t, X_{t+1})`.

use nalgebra::{DMatrix, DVector};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::Compensated;

/// Gram condition numbers above this are flagged as numerically singular.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Transitions `(X_t, X_{t+1})`, `t = 0..n-1`, with the series dated to them.
///
/// Row `t` of growth, SDF increments and returns belongs to the pair
/// `(X_t, X_{t+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePanel {
    current: DMatrix<f64>,
    next: DMatrix<f64>,
    growth: Option<Vec<f64>>,
    sdf: Option<Vec<f64>>,
    returns: Option<DMatrix<f64>>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        if m.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
    }
    Ok(())
}

fn check_positive(what: &'static str, xs: &[f64]) -> Result<()> {
    for (t, &v) in xs.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: t });
        }
        if v <= 0.0 {
            return Err(Error::NonPositive { what, t, value: v });
        }
    }
    Ok(())
}

impl StatePanel {
    /// Panel from consecutive observations `X_0..X_n` (rows of `states`).
    pub fn from_series(states: &DMatrix<f64>) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::InvalidArgument(
                "need at least two state observations".into(),
            ));
        }
        check_finite(states)?;
        let n = states.nrows() - 1;
        Ok(Self {
            current: states.rows(0, n).into_owned(),
            next: states.rows(1, n).into_owned(),
            growth: None,
            sdf: None,
            returns: None,
        })
    }

    /// Panel from explicit transition pairs.
    pub fn from_transitions(current: DMatrix<f64>, next: DMatrix<f64>) -> Result<Self> {
        if current.shape() != next.shape() {
            return Err(Error::LengthMismatch {
                left: current.nrows(),
                right: next.nrows(),
            });
        }
        if current.nrows() == 0 {
            return Err(Error::InvalidArgument("empty panel".into()));
        }
        check_finite(&current)?;
        check_finite(&next)?;
        Ok(Self {
            current,
            next,
            growth: None,
            sdf: None,
            returns: None,
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: len,
            });
        }
        Ok(())
    }

    /// Attaches gross growth `G_{t+1}`; must be strictly positive.
    pub fn with_growth(mut self, growth: Vec<f64>) -> Result<Self> {
        self.check_len(growth.len())?;
        check_positive("growth", &growth)?;
        self.growth = Some(growth);
        Ok(self)
    }

    /// Attaches SDF increments `m_t = m(X_t, X_{t+1})`; must be strictly positive.
    pub fn with_sdf(mut self, sdf: Vec<f64>) -> Result<Self> {
        self.check_len(sdf.len())?;
        check_positive("SDF increment", &sdf)?;
        self.sdf = Some(sdf);
        Ok(self)
    }

    /// Attaches gross returns `R_{t+1}` (n x p).
    pub fn with_returns(mut self, returns: DMatrix<f64>) -> Result<Self> {
        self.check_len(returns.nrows())?;
        check_finite(&returns)?;
        self.returns = Some(returns);
        Ok(self)
    }

    /// Number of transitions `n`.
    pub fn len(&self) -> usize {
        self.current.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.current.ncols()
    }

    /// `X_0..X_{n-1}` as rows.
    pub fn current(&self) -> &DMatrix<f64> {
        &self.current
    }

    /// `X_1..X_n` as rows.
    pub fn next(&self) -> &DMatrix<f64> {
        &self.next
    }

    pub fn growth(&self) -> Result<&[f64]> {
        self.growth.as_deref().ok_or(Error::MissingSeries("growth"))
    }

    pub fn sdf(&self) -> Result<&[f64]> {
        self.sdf.as_deref().ok_or(Error::MissingSeries("sdf increments"))
    }

    pub fn returns(&self) -> Result<&DMatrix<f64>> {
        self.returns.as_ref().ok_or(Error::MissingSeries("returns"))
    }

    pub fn has_growth(&self) -> bool {
        self.growth.is_some()
    }

    pub fn has_sdf(&self) -> bool {
        self.sdf.is_some()
    }

    pub fn has_returns(&self) -> bool {
        self.returns.is_some()
    }

    /// Data used to fit data-dependent bases (the current states).
    pub fn basis_data(&self) -> &DMatrix<f64> {
        &self.current
    }

    /// Panel made of the transitions at `indices` (in that order).
    pub fn resample(&self, indices: &[usize]) -> StatePanel {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(indices.len(), m.ncols(), |i, j| m[(indices[i], j)]);
        let pick_vec = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        StatePanel {
            current: pick(&self.current),
            next: pick(&self.next),
            growth: self.growth.as_ref().map(pick_vec),
            sdf: self.sdf.as_ref().map(pick_vec),
            returns: self.returns.as_ref().map(pick),
        }
    }
}

/// Basis evaluated at both ends of every transition, stored column-per-observation
/// (k x n) so each observation is contiguous.
#[derive(Clone, Debug)]
pub struct BasisEvaluations {
    pub current: DMatrix<f64>,
    pub next: DMatrix<f64>,
}

impl BasisEvaluations {
    pub fn new(basis: &SieveBasis, panel: &StatePanel) -> Result<Self> {
        Ok(Self {
            current: basis.design_matrix(panel.current())?.transpose(),
            next: basis.design_matrix(panel.next())?.transpose(),
        })
    }

    pub fn k(&self) -> usize {
        self.current.nrows()
    }

    pub fn n(&self) -> usize {
        self.current.ncols()
    }

    /// `(1/n) sum_t b(X_t)`.
    pub fn mean_basis(&self) -> DVector<f64> {
        let (k, n) = (self.k(), self.n());
        let mut acc = vec![Compensated::default(); k];
        for t in 0..n {
            let b = self.current.column(t);
            for i in 0..k {
                acc[i].add(b[i]);
            }
        }
        DVector::from_iterator(k, acc.iter().map(|a| a.value() / n as f64))
    }

    /// `(1/n) sum_t b(X_t) b(X_t)'`, symmetric by construction.
    pub fn gram(&self) -> DMatrix<f64> {
        let (k, n) = (self.k(), self.n());
        let mut acc = vec![Compensated::default(); k * k];
        for t in 0..n {
            let b = self.current.column(t);
            for i in 0..k {
                for j in i..k {
                    acc[i * k + j].add(b[i] * b[j]);
                }
            }
        }
        let mut g = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = acc[i * k + j].value() / n as f64;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `(1/n) sum_t b(X_t) m_t b(X_{t+1})'`.
    pub fn pricing(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        let (k, n) = (self.k(), self.n());
        if m.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: m.len(),
            });
        }
        check_positive("SDF increment", m)?;
        let mut acc = vec![Compensated::default(); k * k];
        for t in 0..n {
            let b0 = self.current.column(t);
            let b1 = self.next.column(t);
            for i in 0..k {
                let left = b0[i] * m[t];
                for j in 0..k {
                    acc[i * k + j].add(left * b1[j]);
                }
            }
        }
        Ok(DMatrix::from_fn(k, k, |i, j| acc[i * k + j].value() / n as f64))
    }
}

/// `(1/n) sum_{t=0}^{n-1} b(X_t) b(X_t)'`.
pub fn estimate_gram(basis: &SieveBasis, panel: &StatePanel) -> Result<DMatrix<f64>> {
    Ok(BasisEvaluations::new(basis, panel)?.gram())
}

/// `(1/n) sum_t b(X_t) m_t b(X_{t+1})'` using the panel's SDF increments.
///
/// Plug-in (estimated) SDFs are handled by attaching the constructed series to
/// the panel before calling this.
pub fn estimate_pricing(basis: &SieveBasis, panel: &StatePanel) -> Result<DMatrix<f64>> {
    BasisEvaluations::new(basis, panel)?.pricing(panel.sdf()?)
}

/// `G_{t+1}^{1-gamma}` computed through logs.
pub fn growth_weights(growth: &[f64], gamma: f64) -> Result<Vec<f64>> {
    growth
        .iter()
        .enumerate()
        .map(|(t, &g)| {
            let w = ((1.0 - gamma) * g.ln()).exp();
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::GrowthOverflow { t })
            }
        })
        .collect()
}

/// A map `v -> T v` on sieve coefficient vectors.
pub trait NonlinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

/// Sample map `T v = (1/n) sum_t b(X_t) G_{t+1}^{1-gamma} |b(X_{t+1})'v|^beta`.
pub struct SampleNonlinearMap<'a> {
    evals: &'a BasisEvaluations,
    weights: Vec<f64>,
    beta: f64,
}

impl<'a> SampleNonlinearMap<'a> {
    pub fn new(evals: &'a BasisEvaluations, growth: &[f64], beta: f64, gamma: f64) -> Result<Self> {
        if growth.len() != evals.n() {
            return Err(Error::LengthMismatch {
                left: evals.n(),
                right: growth.len(),
            });
        }
        Ok(Self {
            evals,
            weights: growth_weights(growth, gamma)?,
            beta,
        })
    }
}

impl NonlinearMap for SampleNonlinearMap<'_> {
    fn dim(&self) -> usize {
        self.evals.k()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let (k, n) = (self.evals.k(), self.evals.n());
        let mut acc = vec![Compensated::default(); k];
        for t in 0..n {
            let s = self.evals.next.column(t).dot(v);
            let u = self.weights[t] * s.abs().powf(self.beta);
            let b0 = self.evals.current.column(t);
            for i in 0..k {
                acc[i].add(b0[i] * u);
            }
        }
        DVector::from_iterator(k, acc.iter().map(|a| a.value() / n as f64))
    }
}

/// One application of the sample continuation-value map.
pub fn apply_nonlinear(
    basis: &SieveBasis,
    panel: &StatePanel,
    beta: f64,
    gamma: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if v.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: v.len(),
        });
    }
    let evals = BasisEvaluations::new(basis, panel)?;
    let map = SampleNonlinearMap::new(&evals, panel.growth()?, beta, gamma)?;
    Ok(map.apply(v))
}

/// The k x k sample matrices together with the bookkeeping the eigensolver needs.
#[derive(Clone, Debug)]
pub struct SieveMatrices {
    pub gram: DMatrix<f64>,
    pub pricing: DMatrix<f64>,
    /// `(1/n) sum_t b(X_t)`, the Gram image of the constant function.
    pub mean_basis: DVector<f64>,
    /// Coefficients reproducing the constant function.
    pub constant_coeffs: DVector<f64>,
    pub k: usize,
    pub n: usize,
    pub gram_condition: f64,
}

impl SieveMatrices {
    pub fn estimate(basis: &SieveBasis, panel: &StatePanel) -> Result<Self> {
        let evals = BasisEvaluations::new(basis, panel)?;
        Self::from_evaluations(basis, &evals, panel.sdf()?)
    }

    pub fn from_evaluations(basis: &SieveBasis, evals: &BasisEvaluations, m: &[f64]) -> Result<Self> {
        let gram = evals.gram();
        let pricing = evals.pricing(m)?;
        Ok(Self::from_parts(
            gram,
            pricing,
            evals.mean_basis(),
            basis.constant_coefficients(),
            evals.n(),
        ))
    }

    pub fn from_parts(
        gram: DMatrix<f64>,
        pricing: DMatrix<f64>,
        mean_basis: DVector<f64>,
        constant_coeffs: DVector<f64>,
        n: usize,
    ) -> Self {
        let gram_condition = linalg::condition_estimate(&gram);
        Self {
            k: gram.nrows(),
            gram,
            pricing,
            mean_basis,
            constant_coeffs,
            n,
            gram_condition,
        }
    }

    pub fn is_ill_conditioned(&self) -> bool {
        !(self.gram_condition <= GRAM_CONDITION_LIMIT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_hermite_basis, BasisSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn constant_basis_gram_is_one() {
        let states = series(&[0.1, 0.5, -0.3, 0.2]);
        let panel = StatePanel::from_series(&states).unwrap();
        let b = build_hermite_basis(&states, 0).unwrap();
        let g = estimate_gram(&b, &panel).unwrap();
        assert_eq!(g, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn hand_summed_gram() {
        // b(x) = (1, z) with z standardized; recover the raw (1, x) Gram through the scale.
        let states = series(&[0.0, 2.0, 5.0]);
        let panel = StatePanel::from_series(&states).unwrap();
        let b = build_hermite_basis(&states, 1).unwrap();
        let s = b.standardization()[0].unwrap();
        let g = estimate_gram(&b, &panel).unwrap();
        // raw basis (1, x) = A (1, z) with A = [[1, 0], [mean, sd]]
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, s.mean, s.sd]);
        let raw = &a * g * a.transpose();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!((raw - expected).amax() < 1e-14);
    }

    #[test]
    fn pricing_with_constant_basis_is_mean_sdf() {
        let states = series(&[0.1, 0.5, -0.3, 0.2]);
        let m = vec![0.9, 1.1, 0.95];
        let panel = StatePanel::from_series(&states).unwrap().with_sdf(m.clone()).unwrap();
        let b = build_hermite_basis(&states, 0).unwrap();
        let p = estimate_pricing(&b, &panel).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], (0.9 + 1.1 + 0.95) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pricing_factors_constant_sdf() {
        let states = series(&[0.1, 0.5, -0.3, 0.2, 0.7, -0.1]);
        let b = build_hermite_basis(&states, 3).unwrap();
        let p1 = StatePanel::from_series(&states).unwrap().with_sdf(vec![1.0; 5]).unwrap();
        let pc = StatePanel::from_series(&states).unwrap().with_sdf(vec![0.97; 5]).unwrap();
        let m1 = estimate_pricing(&b, &p1).unwrap();
        let mc = estimate_pricing(&b, &pc).unwrap();
        assert!((m1 * 0.97 - mc).amax() < 1e-15);
    }

    #[test]
    fn non_positive_sdf_is_rejected() {
        let states = series(&[0.1, 0.5, -0.3]);
        let err = StatePanel::from_series(&states).unwrap().with_sdf(vec![1.0, -0.2]);
        assert!(matches!(err, Err(Error::NonPositive { t: 1, .. })));
        let evals = BasisEvaluations::new(
            &build_hermite_basis(&states, 1).unwrap(),
            &StatePanel::from_series(&states).unwrap(),
        )
        .unwrap();
        assert!(evals.pricing(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn constant_span_identity_is_exact() {
        let states = series(&[0.1, 0.5, -0.3, 0.2, 0.7, -0.1, 0.33, 0.05]);
        for spec in [BasisSpec::Hermite { degree: 4 }] {
            let b = spec.build(&states).unwrap();
            let panel = StatePanel::from_series(&states).unwrap().with_sdf(vec![1.0; 7]).unwrap();
            let mats = SieveMatrices::estimate(&b, &panel).unwrap();
            let c1 = b.constant_coefficients();
            assert_eq!(&mats.pricing * &c1, &mats.gram * &c1);
            assert_eq!(&mats.gram * &c1, mats.mean_basis);
        }
    }

    #[test]
    fn log_utility_map_is_mean_basis() {
        let states = series(&[0.1, 0.5, -0.3, 0.2, 0.7, -0.1, 0.33, 0.05]);
        let panel = StatePanel::from_series(&states)
            .unwrap()
            .with_growth(vec![1.01, 0.99, 1.02, 1.0, 0.98, 1.03, 1.0])
            .unwrap();
        let b = build_hermite_basis(&states, 3).unwrap();
        let t = apply_nonlinear(&b, &panel, 0.9, 1.0, &b.constant_coefficients()).unwrap();
        let evals = BasisEvaluations::new(&b, &panel).unwrap();
        assert!((t - evals.mean_basis()).amax() < 1e-15);
    }

    #[test]
    fn growth_overflow_names_the_period() {
        let states = series(&[0.1, 0.5, -0.3]);
        let panel = StatePanel::from_series(&states).unwrap().with_growth(vec![1.0, 1e-300]).unwrap();
        let b = build_hermite_basis(&states, 1).unwrap();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            apply_nonlinear(&b, &panel, 0.9, 5.0, &v),
            Err(Error::GrowthOverflow { t: 1 })
        ));
    }

    #[test]
    fn resample_picks_transitions() {
        let states = series(&[0.0, 1.0, 2.0, 3.0]);
        let panel = StatePanel::from_series(&states).unwrap().with_sdf(vec![0.5, 0.6, 0.7]).unwrap();
        let r = panel.resample(&[2, 0, 2]);
        assert_eq!(r.current().as_slice(), &[2.0, 0.0, 2.0]);
        assert_eq!(r.next().as_slice(), &[3.0, 1.0, 3.0]);
        assert_eq!(r.sdf().unwrap(), &[0.7, 0.5, 0.7]);
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
            let states = series(&v);
            let b = build_hermite_basis(&states, 5).unwrap();
            let g = estimate_gram(&b, &StatePanel::from_series(&states).unwrap()).unwrap();
            prop_assert!(g == g.transpose());
            let eig = nalgebra::SymmetricEigen::new(g.clone());
            prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));
        }

        #[test]
        fn pricing_is_linear_in_sdf(a in 0.1f64..3.0, c in 0.1f64..3.0, seed in 0u64..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..41).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m1: Vec<f64> = (0..40).map(|_| rng.random_range(0.5..1.5)).collect();
            let m2: Vec<f64> = (0..40).map(|_| rng.random_range(0.5..1.5)).collect();
            let states = series(&v);
            let b = build_hermite_basis(&states, 4).unwrap();
            let evals = BasisEvaluations::new(&b, &StatePanel::from_series(&states).unwrap()).unwrap();
            let mix: Vec<f64> = m1.iter().zip(&m2).map(|(x, y)| a * x + c * y).collect();
            let lhs = evals.pricing(&mix).unwrap();
            let rhs = evals.pricing(&m1).unwrap() * a + evals.pricing(&m2).unwrap() * c;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn nonlinear_map_is_beta_homogeneous(scale in 0.01f64..50.0, beta in 0.5f64..0.999) {
            let v: Vec<f64> = (0..31).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.01).collect();
            let states = series(&v);
            let growth: Vec<f64> = v[1..].iter().map(|g| g.exp()).collect();
            let panel = StatePanel::from_series(&states).unwrap().with_growth(growth).unwrap();
            let b = build_hermite_basis(&states, 3).unwrap();
            let c = DVector::from_vec(vec![1.0, 0.2, -0.1, 0.05]);
            let t1 = apply_nonlinear(&b, &panel, beta, 15.0, &c).unwrap();
            let t2 = apply_nonlinear(&b, &panel, beta, 15.0, &(&c * scale)).unwrap();
            let expected = t1 * scale.powf(beta);
            prop_assert!((t2 - &expected).amax() <= 1e-12 * expected.amax().max(1.0));
        }
    }
}
