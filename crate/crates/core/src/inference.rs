//! Influence-function variances for `rho`, the long-run yield and the
//! permanent-component entropy, and the circular stationary bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SieveBasis;
use crate::error::{Error, Result};
use crate::pfeig::{self, EigenSolution};
use crate::sievemat::StatePanel;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSeries {
    /// `phi*(X_t) (m_t phi(X_{t+1}) - rho phi(X_t))`.
    pub psi_rho: Vec<f64>,
    pub rho: f64,
    pub v_rho: f64,
    /// `v_rho / rho^2`.
    pub v_y: f64,
    /// Long-run variance of the entropy influence function.
    pub v_l: f64,
    pub lr_bandwidth: usize,
}

impl InfluenceSeries {
    pub fn n(&self) -> usize {
        self.psi_rho.len()
    }

    pub fn se_rho(&self) -> f64 {
        (self.v_rho / self.n() as f64).sqrt()
    }

    pub fn se_y(&self) -> f64 {
        (self.v_y / self.n() as f64).sqrt()
    }

    pub fn se_l(&self) -> f64 {
        (self.v_l / self.n() as f64).sqrt()
    }
}

/// `ceil(4 (n / 100)^(2/9))`.
pub fn default_bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).ceil() as usize
}

/// Influence series from eigenfunction values along the sample. The entropy
/// variance uses the default bandwidth, capped at `n - 1`.
pub fn influence_from_values(
    rho: f64,
    phi_t: &[f64],
    phi_next: &[f64],
    phi_star_t: &[f64],
    m: &[f64],
) -> Result<InfluenceSeries> {
    let n = m.len();
    for len in [phi_t.len(), phi_next.len(), phi_star_t.len()] {
        if len != n {
            return Err(Error::LengthMismatch { left: n, right: len });
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let psi_rho: Vec<f64> = (0..n)
        .map(|t| phi_star_t[t] * (m[t] * phi_next[t] - rho * phi_t[t]))
        .collect();
    let v_rho = stats::mean(&psi_rho.iter().map(|p| p * p).collect::<Vec<_>>());
    let mut out = InfluenceSeries {
        psi_rho,
        rho,
        v_rho,
        v_y: v_rho / (rho * rho),
        v_l: 0.0,
        lr_bandwidth: default_bandwidth(n).min(n - 1),
    };
    out.v_l = variance_entropy(&out, m, out.lr_bandwidth)?;
    Ok(out)
}

pub fn influence_rho(
    sol: &EigenSolution,
    basis: &SieveBasis,
    panel: &StatePanel,
    m: &[f64],
) -> Result<InfluenceSeries> {
    let (phi_t, phi_star_t) = pfeig::eigenfunction_values(sol, basis, panel.current())?;
    let (phi_next, _) = pfeig::eigenfunction_values(sol, basis, panel.next())?;
    influence_from_values(sol.rho, &phi_t, &phi_next, &phi_star_t, m)
}

/// Newey-West variance of `psi_rho / rho - (log m - mean log m)`.
pub fn variance_entropy(infl: &InfluenceSeries, m: &[f64], bandwidth: usize) -> Result<f64> {
    let n = infl.n();
    if m.len() != n {
        return Err(Error::LengthMismatch { left: n, right: m.len() });
    }
    if bandwidth >= n {
        return Err(Error::Bandwidth { bandwidth, n });
    }
    let logs: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    let mean_log = stats::mean(&logs);
    let psi_l: Vec<f64> = infl
        .psi_rho
        .iter()
        .zip(&logs)
        .map(|(p, l)| p / infl.rho - (l - mean_log))
        .collect();
    Ok(stats::newey_west(&psi_l, bandwidth))
}

/// One stationary-bootstrap block: `len` consecutive indices from `start`, wrapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

/// Blocks covering exactly `n` positions; block lengths are geometric with mean
/// `expected_block` (the last block is truncated).
pub fn stationary_bootstrap_blocks<R: Rng + ?Sized>(n: usize, expected_block: f64, rng: &mut R) -> Vec<Block> {
    assert!(expected_block >= 1.0, "expected block length must be at least 1");
    let p_restart = 1.0 / expected_block;
    let mut blocks = Vec::new();
    let mut filled = 0;
    while filled < n {
        let start = rng.random_range(0..n);
        let mut len = 1;
        while filled + len < n && rng.random::<f64>() >= p_restart {
            len += 1;
        }
        blocks.push(Block { start, len });
        filled += len;
    }
    blocks
}

pub fn indices_from_blocks(n: usize, blocks: &[Block]) -> Vec<usize> {
    blocks
        .iter()
        .flat_map(|b| (0..b.len).map(move |j| (b.start + j) % n))
        .collect()
}

pub fn stationary_bootstrap_indices_rng<R: Rng + ?Sized>(n: usize, expected_block: f64, rng: &mut R) -> Vec<usize> {
    let blocks = stationary_bootstrap_blocks(n, expected_block, rng);
    indices_from_blocks(n, &blocks)
}

/// Circular stationary-bootstrap resample of `0..n`.
pub fn stationary_bootstrap_indices(n: usize, expected_block: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stationary_bootstrap_indices_rng(n, expected_block, &mut rng)
}

/// Generator for replicate `r`: the seed's stream `r`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Statistic on the original sample.
    pub point: Vec<f64>,
    /// `replicates[j]` holds the successful draws of statistic `j`, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub level: f64,
    pub expected_block: f64,
    pub requested: usize,
    pub discarded: usize,
}

/// Percentile intervals for a vector-valued statistic under the stationary bootstrap.
///
/// A replicate is discarded when the statistic errors or returns a non-finite value.
pub fn bootstrap_ci<F>(
    statistic: F,
    panel: &StatePanel,
    b: usize,
    expected_block: f64,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&StatePanel) -> Result<Vec<f64>> + Sync,
{
    if b < 50 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 50 replications, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    if !(expected_block >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "expected block length must be at least 1, got {expected_block}"
        )));
    }
    let point = statistic(panel)?;
    let n = panel.len();
    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let idx = stationary_bootstrap_indices_rng(n, expected_block, &mut rng);
            match statistic(&panel.resample(&idx)) {
                Ok(v) if v.len() == point.len() && v.iter().all(|x| x.is_finite()) => Some(v),
                _ => None,
            }
        })
        .collect();
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let discarded = b - ok.len();
    if 2 * discarded > b {
        return Err(Error::BootstrapUnstable {
            failed: discarded,
            total: b,
        });
    }
    let replicates: Vec<Vec<f64>> = (0..point.len())
        .map(|j| ok.iter().map(|v| v[j]).collect())
        .collect();
    let (lo_p, hi_p) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut ci_lo = Vec::with_capacity(point.len());
    let mut ci_hi = Vec::with_capacity(point.len());
    for draws in &replicates {
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        ci_lo.push(stats::quantile_sorted(&sorted, lo_p));
        ci_hi.push(stats::quantile_sorted(&sorted, hi_p));
    }
    Ok(BootstrapResult {
        point,
        replicates,
        ci_lo,
        ci_hi,
        level,
        expected_block,
        requested: b,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn toy_panel(n: usize) -> StatePanel {
        let states = DMatrix::from_fn(n + 1, 1, |i, _| ((i * 37) % 11) as f64);
        StatePanel::from_series(&states)
            .unwrap()
            .with_growth((0..n).map(|t| 1.0 + 0.01 * (t % 3) as f64).collect())
            .unwrap()
    }

    #[test]
    fn constant_sdf_has_zero_influence() {
        let n = 20;
        let ones = vec![1.0; n];
        let infl = influence_from_values(0.97, &ones, &ones, &ones, &vec![0.97; n]).unwrap();
        assert!(infl.psi_rho.iter().all(|p| *p == 0.0));
        assert_eq!(infl.v_rho, 0.0);
        assert_abs_diff_eq!(infl.v_l, 0.0, epsilon = 1e-30);
    }

    #[test]
    fn delta_method_and_bandwidth() {
        let ones = vec![1.0; 50];
        let m: Vec<f64> = (0..50).map(|t| 0.9 + 0.01 * (t % 7) as f64).collect();
        let rho = stats::mean(&m);
        let infl = influence_from_values(rho, &ones, &ones, &ones, &m).unwrap();
        assert!((infl.v_y * rho * rho / infl.v_rho - 1.0).abs() < 4.0 * f64::EPSILON);
        assert!(matches!(variance_entropy(&infl, &m, 50), Err(Error::Bandwidth { .. })));
        // bandwidth 0 is the plain variance of the summand
        let logs: Vec<f64> = m.iter().map(|v| v.ln()).collect();
        let ml = stats::mean(&logs);
        let psi_l: Vec<f64> = (0..50).map(|t| (m[t] - rho) / rho - (logs[t] - ml)).collect();
        let direct = psi_l.iter().map(|p| p * p).sum::<f64>() / 50.0 - stats::mean(&psi_l).powi(2);
        assert_abs_diff_eq!(variance_entropy(&infl, &m, 0).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn lognormal_entropy_variance() {
        use rand_distr::{Distribution, Normal};
        let s: f64 = 0.3;
        let normal = Normal::new(-0.02, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng).exp()).collect();
        let ones = vec![1.0; m.len()];
        let infl = influence_from_values(stats::mean(&m), &ones, &ones, &ones, &m).unwrap();
        let exact = (s * s).exp() - 1.0 - s * s;
        assert!((infl.v_l / exact - 1.0).abs() < 0.2, "{} vs {exact}", infl.v_l);
    }

    #[test]
    fn default_bandwidth_values() {
        assert_eq!(default_bandwidth(100), 4);
        assert_eq!(default_bandwidth(276), 6);
        assert_eq!(default_bandwidth(1600), 8);
    }

    #[test]
    fn unit_block_is_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = stationary_bootstrap_blocks(1000, 1.0, &mut rng);
        assert_eq!(blocks.len(), 1000);
        assert!(blocks.iter().all(|b| b.len == 1));
    }

    #[test]
    fn mean_block_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let blocks = stationary_bootstrap_blocks(700_000, 6.0, &mut rng);
        assert!(blocks.len() >= 100_000);
        let mean = blocks.iter().map(|b| b.len as f64).sum::<f64>() / blocks.len() as f64;
        assert!((mean - 6.0).abs() < 0.1, "mean = {mean}");
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let panel = toy_panel(40);
        let stat = |p: &StatePanel| Ok(vec![stats::mean(p.growth()?)]);
        let a = bootstrap_ci(stat, &panel, 60, 6.0, 0.9, 8).unwrap();
        let b = bootstrap_ci(stat, &panel, 60, 6.0, 0.9, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_lo[0] <= a.ci_hi[0]);
        let c = bootstrap_ci(stat, &panel, 60, 6.0, 0.9, 9).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn constant_statistic_gives_degenerate_interval() {
        let panel = toy_panel(30);
        let r = bootstrap_ci(|_: &StatePanel| Ok(vec![2.5]), &panel, 50, 6.0, 0.9, 1).unwrap();
        assert_eq!((r.ci_lo[0], r.ci_hi[0]), (2.5, 2.5));
    }

    #[test]
    fn tiny_panel_smoke() {
        let panel = toy_panel(2);
        let r = bootstrap_ci(|p: &StatePanel| Ok(vec![stats::mean(p.growth()?)]), &panel, 50, 6.0, 0.9, 1).unwrap();
        assert!(r.ci_lo[0].is_finite() && r.ci_hi[0].is_finite());
    }

    #[test]
    fn failures_are_discarded_or_fatal() {
        let panel = toy_panel(30);
        let flaky = |p: &StatePanel| {
            let g = p.growth()?;
            if g[0] > 1.015 {
                Err(Error::EigenFailure)
            } else {
                Ok(vec![g[0]])
            }
        };
        let r = bootstrap_ci(flaky, &panel, 90, 6.0, 0.9, 2).unwrap();
        assert!(r.discarded > 0 && r.discarded < 45);
        assert_eq!(r.replicates[0].len(), 90 - r.discarded);
        let always = |_: &StatePanel| -> Result<Vec<f64>> { Err(Error::EigenFailure) };
        assert!(bootstrap_ci(always, &panel, 50, 6.0, 0.9, 2).is_err());
        assert!(bootstrap_ci(|_: &StatePanel| Ok(vec![1.0]), &panel, 49, 6.0, 0.9, 2).is_err());
    }

    proptest! {
        #[test]
        fn indices_cover_exactly_n(n in 1usize..300, block in 1.0f64..20.0, seed in 0u64..1000) {
            let idx = stationary_bootstrap_indices(n, block, seed);
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.iter().all(|&i| i < n));
            prop_assert_eq!(idx, stationary_bootstrap_indices(n, block, seed));
        }
    }
}
