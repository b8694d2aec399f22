//! Sieve dictionaries on the state space.
//!
//! Three families are supported:
//!
//! * standardized Hermite polynomials `He_j((x - mean) / sd) / sqrt(j!)`, which are
//!   orthonormal under the standard normal and therefore approximately orthonormal
//!   on standardized data;
//! * clamped cubic B-splines with interior knots at evenly spaced sample quantiles;
//! * sparse tensor products of univariate Hermite bases truncated by total degree.
//!
//! A basis is immutable after construction and can be evaluated concurrently.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const SPLINE_DEGREE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    Hermite,
    #[serde(rename = "bspline")]
    BSpline,
    #[serde(rename = "sparse")]
    SparseTensor,
}

/// Location/scale used to standardize one state coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Component {
    Hermite { degree: usize, scale: Standardization },
    /// Full clamped knot vector, `k + 4` entries.
    BSpline { knots: Vec<f64> },
}

impl Component {
    fn len(&self) -> usize {
        match self {
            Component::Hermite { degree, .. } => degree + 1,
            Component::BSpline { knots } => knots.len() - SPLINE_DEGREE - 1,
        }
    }

    fn eval_into(&self, x: f64, out: &mut [f64]) {
        match self {
            Component::Hermite { degree, scale } => {
                hermite_orthonormal((x - scale.mean) / scale.sd, *degree, out)
            }
            Component::BSpline { knots } => bspline_values(knots, x, out),
        }
    }
}

/// Orthonormal probabilists' Hermite values `He_j(z) / sqrt(j!)` for `j = 0..=degree`.
pub(crate) fn hermite_orthonormal(z: f64, degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if degree == 0 {
        return;
    }
    out[1] = z;
    for j in 1..degree {
        let jf = j as f64;
        out[j + 1] = (z * out[j] - jf.sqrt() * out[j - 1]) / (jf + 1.0).sqrt();
    }
}

/// Cubic B-spline values on a clamped knot vector. `x` is clamped to the knot range.
fn bspline_values(knots: &[f64], x: f64, out: &mut [f64]) {
    let p = SPLINE_DEGREE;
    let nb = knots.len() - p - 1;
    let x = x.clamp(knots[p], knots[nb]);
    let span = if x >= knots[nb] {
        // last non-empty interval
        let mut s = nb - 1;
        while s > p && knots[s] >= knots[nb] {
            s -= 1;
        }
        s
    } else {
        // largest i in [p, nb) with knots[i] <= x
        let mut lo = p;
        let mut hi = nb;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let mut n = [0.0; SPLINE_DEGREE + 1];
    let mut left = [0.0; SPLINE_DEGREE + 1];
    let mut right = [0.0; SPLINE_DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for (r, v) in n.iter().enumerate() {
        out[span - p + r] = *v;
    }
}

/// A dictionary of `k` real functions on a `d`-dimensional state space.
#[derive(Clone, Debug, PartialEq)]
pub struct SieveBasis {
    family: BasisFamily,
    components: Vec<Component>,
    /// For each basis function, the index of the univariate factor on every coordinate.
    terms: Vec<Vec<usize>>,
    total_degree_cap: Option<usize>,
}

impl SieveBasis {
    /// Number of basis functions `k`.
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn state_dim(&self) -> usize {
        self.components.len()
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn total_degree_cap(&self) -> Option<usize> {
        self.total_degree_cap
    }

    /// Per-coordinate standardization, when the coordinate carries a polynomial factor.
    pub fn standardization(&self) -> Vec<Option<Standardization>> {
        self.components
            .iter()
            .map(|c| match c {
                Component::Hermite { scale, .. } => Some(*scale),
                Component::BSpline { .. } => None,
            })
            .collect()
    }

    /// Per-coordinate knot vectors (B-spline coordinates only).
    pub fn knots(&self) -> Vec<Option<&[f64]>> {
        self.components
            .iter()
            .map(|c| match c {
                Component::BSpline { knots } => Some(knots.as_slice()),
                Component::Hermite { .. } => None,
            })
            .collect()
    }

    /// Multi-index of every basis function.
    pub fn terms(&self) -> &[Vec<usize>] {
        &self.terms
    }

    /// Total polynomial degree of each function; `None` for spline bases.
    pub fn degrees(&self) -> Option<Vec<usize>> {
        if self
            .components
            .iter()
            .any(|c| matches!(c, Component::BSpline { .. }))
        {
            return None;
        }
        Some(self.terms.iter().map(|t| t.iter().sum()).collect())
    }

    /// Coefficients `c` with `b(x)'c = 1` for every `x`.
    pub fn constant_coefficients(&self) -> DVector<f64> {
        match self.family {
            BasisFamily::BSpline => DVector::from_element(self.dim(), 1.0),
            _ => {
                let mut c = DVector::zeros(self.dim());
                let idx = self
                    .terms
                    .iter()
                    .position(|t| t.iter().all(|&j| j == 0))
                    .expect("polynomial bases always contain the constant term");
                c[idx] = 1.0;
                c
            }
        }
    }

    /// Evaluates `b^k(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut out = DVector::zeros(self.dim());
        let mut scratch = self.scratch();
        self.eval_with(x, &mut scratch, out.as_mut_slice());
        Ok(out)
    }

    /// Evaluates every row of `points` (m x d), returning the m x k design matrix.
    pub fn design_matrix(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: points.ncols(),
            });
        }
        let k = self.dim();
        let mut out = DMatrix::zeros(points.nrows(), k);
        let mut scratch = self.scratch();
        let mut x = vec![0.0; self.state_dim()];
        let mut row = vec![0.0; k];
        for i in 0..points.nrows() {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = points[(i, j)];
            }
            self.check_point(&x).map_err(|_| Error::NonFinite { index: i })?;
            self.eval_with(&x, &mut scratch, &mut row);
            for (j, v) in row.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        Ok(out)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    fn scratch(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| vec![0.0; c.len()]).collect()
    }

    fn eval_with(&self, x: &[f64], scratch: &mut [Vec<f64>], out: &mut [f64]) {
        for ((c, buf), xi) in self.components.iter().zip(scratch.iter_mut()).zip(x) {
            c.eval_into(*xi, buf);
        }
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = term
                .iter()
                .zip(scratch.iter())
                .map(|(&j, vals)| vals[j])
                .product();
        }
    }
}

fn column_standardization(data: &DMatrix<f64>, coord: usize) -> Result<Standardization> {
    let col: Vec<f64> = data.column(coord).iter().copied().collect();
    if let Some(index) = col.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mean = stats::mean(&col);
    let sd = stats::sample_variance(&col).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateCoordinate { coord });
    }
    Ok(Standardization { mean, sd })
}

/// Tensor multi-indices over `lens`, kept when the index sum is below `cap`,
/// in graded order (total degree, then earlier coordinates first).
fn graded_terms(lens: &[usize], cap: Option<usize>) -> Vec<Vec<usize>> {
    let mut terms: Vec<Vec<usize>> = vec![vec![]];
    for &len in lens {
        terms = terms
            .into_iter()
            .flat_map(|t| {
                (0..len).map(move |j| {
                    let mut next = t.clone();
                    next.push(j);
                    next
                })
            })
            .collect();
    }
    if let Some(cap) = cap {
        terms.retain(|t| t.iter().sum::<usize>() < cap);
    }
    terms.sort_by(|a, b| {
        let (sa, sb) = (a.iter().sum::<usize>(), b.iter().sum::<usize>());
        sa.cmp(&sb).then_with(|| b.cmp(a))
    });
    terms
}

/// Standardized Hermite basis of the given degree on every coordinate (full
/// tensor product when `d > 1`).
pub fn build_hermite_basis(data: &DMatrix<f64>, degree_per_dim: usize) -> Result<SieveBasis> {
    if data.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Hermite basis needs at least 2 observations, got {}",
            data.nrows()
        )));
    }
    if data.ncols() == 0 {
        return Err(Error::InvalidArgument("state dimension is zero".into()));
    }
    let components = (0..data.ncols())
        .map(|j| {
            Ok(Component::Hermite {
                degree: degree_per_dim,
                scale: column_standardization(data, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lens: Vec<usize> = components.iter().map(Component::len).collect();
    Ok(SieveBasis {
        family: BasisFamily::Hermite,
        terms: graded_terms(&lens, None),
        components,
        total_degree_cap: None,
    })
}

/// Hermite basis with given per-coordinate location and scale.
pub fn hermite_basis_with(scales: &[Standardization], degree_per_dim: usize) -> Result<SieveBasis> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("state dimension is zero".into()));
    }
    if let Some(coord) = scales.iter().position(|s| !(s.sd > 0.0) || !s.mean.is_finite()) {
        return Err(Error::DegenerateCoordinate { coord });
    }
    let components: Vec<Component> = scales
        .iter()
        .map(|&scale| Component::Hermite {
            degree: degree_per_dim,
            scale,
        })
        .collect();
    let lens: Vec<usize> = components.iter().map(Component::len).collect();
    Ok(SieveBasis {
        family: BasisFamily::Hermite,
        terms: graded_terms(&lens, None),
        components,
        total_degree_cap: None,
    })
}

/// Clamped cubic B-spline basis of dimension `k` on univariate data.
///
/// Boundary knots sit at the sample min and max; the `k - 4` interior knots are
/// type-7 sample quantiles at probabilities `j / (k - 3)`.
pub fn build_bspline_basis(data: &DMatrix<f64>, k: usize) -> Result<SieveBasis> {
    if data.ncols() != 1 {
        return Err(Error::InvalidArgument(format!(
            "B-spline basis is univariate, got state dimension {}",
            data.ncols()
        )));
    }
    if k < SPLINE_DEGREE + 2 {
        return Err(Error::InvalidArgument(format!(
            "cubic B-spline basis needs k >= 5, got {k}"
        )));
    }
    if data.nrows() < k {
        return Err(Error::InvalidArgument(format!(
            "B-spline basis of dimension {k} needs at least {k} observations, got {}",
            data.nrows()
        )));
    }
    let mut sorted: Vec<f64> = data.column(0).iter().copied().collect();
    if let Some(index) = sorted.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo >= hi {
        return Err(Error::DegenerateCoordinate { coord: 0 });
    }

    let n_interior = k - SPLINE_DEGREE - 1;
    let mut interior: Vec<f64> = (1..=n_interior)
        .map(|j| stats::quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64))
        .filter(|&q| q > lo && q < hi)
        .collect();
    interior.dedup();
    if interior.len() < n_interior {
        return Err(Error::InsufficientKnots {
            required: n_interior,
            found: interior.len(),
        });
    }

    let mut knots = vec![lo; SPLINE_DEGREE + 1];
    knots.extend(interior);
    knots.extend(std::iter::repeat_n(hi, SPLINE_DEGREE + 1));
    Ok(SieveBasis {
        family: BasisFamily::BSpline,
        components: vec![Component::BSpline { knots }],
        terms: (0..k).map(|j| vec![j]).collect(),
        total_degree_cap: None,
    })
}

/// Tensor products of univariate polynomial bases, keeping the terms whose total
/// degree is strictly below `total_degree_cap`.
pub fn build_sparse_tensor(bases: &[SieveBasis], total_degree_cap: usize) -> Result<SieveBasis> {
    if total_degree_cap == 0 {
        return Err(Error::InvalidArgument(
            "total degree cap must be positive".into(),
        ));
    }
    if bases.is_empty() {
        return Err(Error::InvalidArgument("no component bases".into()));
    }
    let mut components = Vec::with_capacity(bases.len());
    for b in bases {
        if b.state_dim() != 1 || b.family() != BasisFamily::Hermite {
            return Err(Error::InvalidArgument(
                "sparse tensor components must be univariate polynomial bases".into(),
            ));
        }
        components.push(b.components[0].clone());
    }
    let lens: Vec<usize> = components.iter().map(Component::len).collect();
    Ok(SieveBasis {
        family: BasisFamily::SparseTensor,
        terms: graded_terms(&lens, Some(total_degree_cap)),
        components,
        total_degree_cap: Some(total_degree_cap),
    })
}

/// Serializable basis recipe; the data-dependent parts (standardization, knots)
/// are fitted by [`BasisSpec::build`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BasisSpec {
    Hermite { degree: usize },
    #[serde(rename = "bspline")]
    BSpline { k: usize },
    Sparse { degree: usize, cap: usize },
}

impl BasisSpec {
    /// Recipe from a family and a dimension-like parameter `k`: Hermite uses
    /// degree `k - 1`; sparse uses per-coordinate degree `k - 1` and cap `k`.
    pub fn from_family(family: BasisFamily, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        Ok(match family {
            BasisFamily::Hermite => BasisSpec::Hermite { degree: k - 1 },
            BasisFamily::BSpline => BasisSpec::BSpline { k },
            BasisFamily::SparseTensor => BasisSpec::Sparse {
                degree: k - 1,
                cap: k,
            },
        })
    }

    pub fn build(&self, data: &DMatrix<f64>) -> Result<SieveBasis> {
        match *self {
            BasisSpec::Hermite { degree } => build_hermite_basis(data, degree),
            BasisSpec::BSpline { k } => build_bspline_basis(data, k),
            BasisSpec::Sparse { degree, cap } => {
                let parts = (0..data.ncols())
                    .map(|j| build_hermite_basis(&data.columns(j, 1).into_owned(), degree))
                    .collect::<Result<Vec<_>>>()?;
                build_sparse_tensor(&parts, cap)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    /// Explicit-sum He_j(z) = sum_m (-1)^m j! / (m! (j-2m)! 2^m) z^(j-2m).
    fn hermite_explicit(j: usize, z: f64) -> f64 {
        (0..=j / 2)
            .map(|m| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * factorial(j) / (factorial(m) * factorial(j - 2 * m) * 2f64.powi(m as i32))
                    * z.powi((j - 2 * m) as i32)
            })
            .sum()
    }

    /// Textbook Cox-de Boor recursion.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last = knots[knots.len() - 1];
            let in_span = knots[i] <= x && x < knots[i + 1];
            let right_end = x == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if in_span || right_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn hermite_degree_seven_has_eight_functions() {
        let data = column(&normal_draws(50, 1));
        let b = build_hermite_basis(&data, 7).unwrap();
        assert_eq!(b.dim(), 8);
    }

    #[test]
    fn hermite_values_at_the_mean() {
        let data = column(&normal_draws(200, 2));
        let b = build_hermite_basis(&data, 7).unwrap();
        let mean = b.standardization()[0].unwrap().mean;
        let v = b.evaluate(&[mean]).unwrap();
        let expected = [
            1.0,
            0.0,
            -1.0 / 2f64.sqrt(),
            0.0,
            3.0 / 24f64.sqrt(),
            0.0,
            -15.0 / 720f64.sqrt(),
            0.0,
        ];
        for (a, e) in v.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn hermite_matches_explicit_polynomials() {
        let data = column(&normal_draws(300, 3));
        let b = build_hermite_basis(&data, 9).unwrap();
        let s = b.standardization()[0].unwrap();
        for x in [-3.1, -0.7, 0.0, 0.2, 1.9, 4.4] {
            let v = b.evaluate(&[x]).unwrap();
            let z = (x - s.mean) / s.sd;
            for j in 0..=9 {
                let e = hermite_explicit(j, z) / factorial(j).sqrt();
                assert!((v[j] - e).abs() <= 1e-12 * (1.0 + e.abs()), "j={j} x={x}");
            }
        }
    }

    #[test]
    fn hermite_gram_is_near_identity_on_normal_draws() {
        // products of high-degree terms are heavy tailed; the entrywise 0.05
        // band only holds reliably at 10^5 draws up to degree 3
        let draws = normal_draws(100_000, 4);
        let data = column(&draws);
        let b = build_hermite_basis(&data, 3).unwrap();
        let x = b.design_matrix(&data).unwrap();
        let g = x.transpose() * &x / draws.len() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - target).abs() < 0.05, "({i},{j}) = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        match build_hermite_basis(&data, 3) {
            Err(Error::DegenerateCoordinate { coord }) => assert_eq!(coord, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bspline_knots_at_quantiles() {
        let draws = normal_draws(400, 5);
        let b = build_bspline_basis(&column(&draws), 8).unwrap();
        let knots = b.knots()[0].unwrap();
        assert_eq!(knots.len(), 12);
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        for (j, p) in [0.2, 0.4, 0.6, 0.8].iter().enumerate() {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let q = sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo]);
            assert_abs_diff_eq!(knots[4 + j], q, epsilon = 1e-15);
        }
        assert_eq!(knots[0], sorted[0]);
        assert_eq!(knots[11], sorted[399]);
    }

    #[test]
    fn bspline_matches_cox_de_boor() {
        let draws = normal_draws(400, 6);
        let b = build_bspline_basis(&column(&draws), 8).unwrap();
        let knots = b.knots()[0].unwrap().to_vec();
        let xs = normal_draws(200, 7);
        for x in xs {
            let x = x.clamp(knots[0], knots[11]);
            let v = b.evaluate(&[x]).unwrap();
            for i in 0..8 {
                assert_abs_diff_eq!(v[i], cox_de_boor(&knots, i, 3, x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bspline_clamps_outside_range() {
        let draws = normal_draws(100, 8);
        let b = build_bspline_basis(&column(&draws), 6).unwrap();
        let knots = b.knots()[0].unwrap();
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        let at_lo = b.evaluate(&[lo]).unwrap();
        assert_eq!(at_lo[0], 1.0);
        assert!(at_lo.iter().skip(1).all(|&v| v == 0.0));
        assert_eq!(b.evaluate(&[lo - 10.0]).unwrap(), at_lo);
        let at_hi = b.evaluate(&[hi + 3.0]).unwrap();
        assert_eq!(at_hi[5], 1.0);
        assert_eq!(at_hi, b.evaluate(&[hi]).unwrap());
    }

    #[test]
    fn bspline_rejects_tied_data() {
        let mut v = vec![0.0; 50];
        v.extend([1.0, 2.0]);
        assert!(matches!(
            build_bspline_basis(&column(&v), 8),
            Err(Error::InsufficientKnots { .. })
        ));
        assert!(build_bspline_basis(&column(&v), 4).is_err());
    }

    #[test]
    fn sparse_tensor_counts() {
        let d = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 + j as f64 * 0.1);
        let b5 = |j| build_hermite_basis(&d.columns(j, 1).into_owned(), 5).unwrap();
        let b4 = |j| build_hermite_basis(&d.columns(j, 1).into_owned(), 4).unwrap();
        // five functions per coordinate, total degree below 5
        let s = build_sparse_tensor(&[b4(0), b4(1)], 5).unwrap();
        assert_eq!(s.dim(), 15);
        let full = build_sparse_tensor(&[b4(0), b4(1)], 100).unwrap();
        assert_eq!(full.dim(), 25);
        assert_eq!(build_sparse_tensor(&[b5(0), b5(1)], 6).unwrap().dim(), 21);

        let b1 = |j| build_hermite_basis(&d.columns(j, 1).into_owned(), 1).unwrap();
        let lin = build_sparse_tensor(&[b1(0), b1(1)], 2).unwrap();
        assert_eq!(lin.terms(), &[vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert!(build_sparse_tensor(&[b1(0)], 0).is_err());
    }

    #[test]
    fn sparse_instruments_are_a_prefix_of_the_solve_basis() {
        let d = DMatrix::from_fn(40, 2, |i, j| ((i * 5 + j) % 13) as f64);
        let small = BasisSpec::Sparse { degree: 4, cap: 4 }.build(&d).unwrap();
        let big = BasisSpec::Sparse { degree: 4, cap: 5 }.build(&d).unwrap();
        assert_eq!(small.dim(), 10);
        assert_eq!(&big.terms()[..10], small.terms());
    }

    #[test]
    fn non_finite_point_is_an_error() {
        let b = build_hermite_basis(&column(&[0.0, 1.0, 2.0]), 2).unwrap();
        assert!(matches!(b.evaluate(&[f64::NAN]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn basis_spec_json_shape() {
        let s: BasisSpec = serde_json::from_str(r#"{"family":"sparse","degree":5,"cap":6}"#).unwrap();
        assert_eq!(s, BasisSpec::Sparse { degree: 5, cap: 6 });
        let j = serde_json::to_string(&BasisSpec::BSpline { k: 8 }).unwrap();
        assert_eq!(j, r#"{"family":"bspline","k":8}"#);
    }

    #[test]
    fn constant_is_representable() {
        let data = column(&normal_draws(100, 9));
        for spec in [BasisSpec::Hermite { degree: 4 }, BasisSpec::BSpline { k: 7 }] {
            let b = spec.build(&data).unwrap();
            let c = b.constant_coefficients();
            for x in [-1.3, 0.0, 0.8] {
                assert_abs_diff_eq!(b.evaluate(&[x]).unwrap().dot(&c), 1.0, epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn bspline_partition_of_unity(u in 0.0f64..=1.0, seed in 0u64..20, k in 5usize..14) {
            let draws = normal_draws(200, seed);
            let b = build_bspline_basis(&column(&draws), k).unwrap();
            let knots = b.knots()[0].unwrap();
            let x = knots[0] + u * (knots[knots.len() - 1] - knots[0]);
            let v = b.evaluate(&[x]).unwrap();
            prop_assert!((v.sum() - 1.0).abs() < 1e-12);
            prop_assert!(v.iter().all(|&e| e >= 0.0));
        }

        #[test]
        fn evaluation_is_deterministic(x in -5.0f64..5.0) {
            let data = column(&normal_draws(50, 11));
            let b = build_hermite_basis(&data, 6).unwrap();
            let a = b.evaluate(&[x]).unwrap();
            let c = b.evaluate(&[x]).unwrap();
            prop_assert!(a.iter().zip(c.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn sparse_count_law(d1 in 0usize..6, d2 in 0usize..6, cap in 1usize..12) {
            let data = DMatrix::from_fn(30, 2, |i, j| ((i * 3 + j * 7) % 17) as f64);
            let p = |j: usize, deg| build_hermite_basis(&data.columns(j, 1).into_owned(), deg).unwrap();
            let s = build_sparse_tensor(&[p(0, d1), p(1, d2)], cap).unwrap();
            let mut count = 0;
            for a in 0..=d1 { for b in 0..=d2 { if a + b < cap { count += 1; } } }
            prop_assert_eq!(s.dim(), count);
        }
    }
}
