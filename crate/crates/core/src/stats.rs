//! Small descriptive statistics shared across modules.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = Compensated::default();
    xs.iter().for_each(|&x| acc.add(x));
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (`n - 1` denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = Compensated::default();
    xs.iter().for_each(|&x| acc.add((x - m) * (x - m)));
    acc.value() / (xs.len() - 1) as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Sample covariance with `1/n` normalization.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut acc = Compensated::default();
    x.iter()
        .zip(y)
        .for_each(|(a, b)| acc.add((a - mx) * (b - my)));
    acc.value() / x.len() as f64
}

/// Pearson correlation; `None` when either series is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let sxy = covariance(x, y);
    let sxx = covariance(x, x);
    let syy = covariance(y, y);
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Mid-ranks (1-based, ties averaged).
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    correlation(&ranks(x), &ranks(y))
}

/// Kendall's tau-b; `None` when either series is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tie_x, mut tie_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tie_x += 1,
                (false, true) => tie_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        concordant += 1
                    } else {
                        discordant += 1
                    }
                }
            }
        }
    }
    let n1 = (concordant + discordant + tie_x) as f64;
    let n2 = (concordant + discordant + tie_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// Newey-West long-run variance with Bartlett weights `1 - l / (bandwidth + 1)`.
pub fn newey_west(xs: &[f64], bandwidth: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let autocov = |lag: usize| {
        let mut acc = Compensated::default();
        for t in lag..n {
            acc.add(d[t] * d[t - lag]);
        }
        acc.value() / n as f64
    };
    let mut v = autocov(0);
    for lag in 1..=bandwidth.min(n.saturating_sub(1)) {
        let w = 1.0 - lag as f64 / (bandwidth as f64 + 1.0);
        v += 2.0 * w * autocov(lag);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(&xs), 2.0);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 1.0 / 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rank_correlations_of_monotone_maps() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
        assert!((kendall_tau(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(kendall_tau(&x, &vec![1.0; 20]).is_none());
    }

    #[test]
    fn kendall_known_value() {
        // 4 concordant, 2 discordant pairs
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 0.5];
        let tau = kendall_tau(&x, &y).unwrap();
        let (mut c, mut d) = (0, 0);
        for i in 0..4 {
            for j in i + 1..4 {
                if (x[i] - x[j]) * (y[i] - y[j]) > 0.0 {
                    c += 1
                } else {
                    d += 1
                }
            }
        }
        assert!((tau - (c - d) as f64 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn newey_west_zero_bandwidth_is_variance() {
        let xs = [0.3, -1.2, 0.8, 2.0, -0.4];
        let v = newey_west(&xs, 0);
        let m = mean(&xs);
        let direct = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!((v - direct).abs() < 1e-15);
    }
}
