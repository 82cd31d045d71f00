//! Small statistics toolbox: Monte Carlo estimates, two-sample z tests,
//! Kolmogorov-Smirnov and chi-square statistics, batch means, quantiles and
//! Gauss-Legendre quadrature.
//!
//! All reductions over replica-ordered slices use [`pairwise_sum`] so that
//! results do not depend on the parallelism degree.

use crate::error::SimError;
use crate::rng::pairwise_sum;
use crate::Result;
use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate: mean, standard error of the mean, replica count.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl McEstimate {
    /// Estimate from per-replica values (fixed pairwise reduction order).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                se: f64::NAN,
                n: 0,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        if n == 1 {
            return McEstimate { mean, se: 0.0, n: 1 };
        }
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n as f64 - 1.0);
        McEstimate {
            mean,
            se: (var / n as f64).sqrt(),
            n: n as u64,
        }
    }

    /// A deterministic value treated as an estimate with zero variance.
    pub fn exact(value: f64) -> Self {
        McEstimate {
            mean: value,
            se: 0.0,
            n: 1,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        McEstimate {
            mean: self.mean * c,
            se: self.se * c.abs(),
            n: self.n,
        }
    }
}

/// Sample variance (n-1 denominator) in fixed reduction order.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    pairwise_sum(&sq) / (n as f64 - 1.0)
}

/// Two-sample z comparison: `z = |m1 - m2| / sqrt(se1^2 + se2^2)`.
///
/// When both sides are deterministic the test degenerates: equal means pass
/// with `z = 0`, unequal means fail with `z = inf`.
pub fn two_sample_z(lhs: McEstimate, rhs: McEstimate, z_max: f64) -> (f64, bool) {
    let denom = (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
    let diff = (lhs.mean - rhs.mean).abs();
    if denom == 0.0 {
        return if diff == 0.0 {
            (0.0, true)
        } else {
            (f64::INFINITY, false)
        };
    }
    let z = diff / denom;
    (z, z <= z_max)
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
///
/// `sample` must be sorted ascending.
pub fn ks_statistic_sorted<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        let lo = f - i as f64 / n;
        let hi = (i as f64 + 1.0) / n - f;
        d = d.max(lo).max(hi);
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic. Both inputs sorted ascending.
pub fn ks_two_sample_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Pearson chi-square goodness-of-fit against expected counts.
///
/// Bins with expected count below `min_expected` are merged into their right
/// neighbour (the final bin absorbs the leftover tail). Returns the statistic,
/// the degrees of freedom (`bins - 1`) and the upper-tail p-value.
pub fn chi_square_gof(observed: &[f64], expected: &[f64], min_expected: f64) -> (f64, usize, f64) {
    assert_eq!(observed.len(), expected.len());
    let mut obs_m = Vec::new();
    let mut exp_m = Vec::new();
    let (mut acc_o, mut acc_e) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o;
        acc_e += e;
        if acc_e >= min_expected {
            obs_m.push(acc_o);
            exp_m.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 {
        if let (Some(o), Some(e)) = (obs_m.last_mut(), exp_m.last_mut()) {
            *o += acc_o;
            *e += acc_e;
        } else {
            obs_m.push(acc_o);
            exp_m.push(acc_e);
        }
    }
    let stat: f64 = obs_m
        .iter()
        .zip(&exp_m)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = obs_m.len().saturating_sub(1).max(1);
    let p = chi_square_sf(stat, dof as f64);
    (stat, dof, p)
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof).expect("dof > 0");
    dist.sf(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Batch-means estimate of the long-run mean of a correlated series.
///
/// Splits `series` into `batches` equal blocks; the standard error comes from
/// the dispersion of block means, which absorbs autocorrelation at lags
/// shorter than a block.
pub fn batch_means(series: &[f64], batches: usize) -> Result<McEstimate> {
    let b = batches.max(2);
    if series.len() < 2 * b {
        return Err(SimError::Config(format!(
            "batch means needs at least {} samples, got {}",
            2 * b,
            series.len()
        )));
    }
    let len = series.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|i| pairwise_sum(&series[i * len..(i + 1) * len]) / len as f64)
        .collect();
    let est = McEstimate::from_values(&means);
    Ok(McEstimate {
        mean: est.mean,
        se: est.se,
        n: series.len() as u64,
    })
}

/// Index of dispersion (variance over mean) of count data.
pub fn index_of_dispersion(counts: &[f64]) -> f64 {
    let est = McEstimate::from_values(counts);
    sample_variance(counts) / est.mean
}

/// `q`-quantile of a sorted sample by linear interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Equal-width histogram over `[lo, hi]`; returns (left, right, mass) rows.
pub fn histogram(sorted: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, f64)> {
    let n = sorted.len() as f64;
    let width = (hi - lo) / bins as f64;
    let mut out = Vec::with_capacity(bins);
    for i in 0..bins {
        let a = lo + i as f64 * width;
        let b = if i + 1 == bins { hi } else { a + width };
        let start = sorted.partition_point(|&x| x < a);
        let stop = if i + 1 == bins {
            sorted.partition_point(|&x| x <= b)
        } else {
            sorted.partition_point(|&x| x < b)
        };
        out.push((a, b, (stop - start) as f64 / n));
    }
    out
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, cached for the common
/// orders.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    use std::sync::OnceLock;
    static GL16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        16 => GL16.get_or_init(|| gauss_legendre_unit_fresh(16)).clone(),
        32 => GL32.get_or_init(|| gauss_legendre_unit_fresh(32)).clone(),
        64 => GL64.get_or_init(|| gauss_legendre_unit_fresh(64)).clone(),
        _ => gauss_legendre_unit_fresh(n),
    }
}

/// Newton iteration on the Legendre polynomial; accurate to ~1e-15 for the
/// orders used here (<= 128).
fn gauss_legendre_unit_fresh(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Initial guess (Chebyshev-like), then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // pin the weight sum to exactly 1 so constant integrands come out exact
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let head: f64 = weights[..n - 1].iter().sum();
    weights[n - 1] = 1.0 - head;
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Trapezoid rule over a uniform grid of `values` spanning `[a, b]`.
pub fn trapezoid_uniform(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len();
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    let interior = pairwise_sum(&values[1..n - 1]);
    h * (0.5 * (values[0] + values[n - 1]) + interior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mc_estimate_basics() {
        let est = McEstimate::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert!((est.mean - 2.5).abs() < 1e-14);
        // sd = sqrt(5/3), se = sd/2
        assert!((est.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-14);
        assert_eq!(est.n, 4);
    }

    #[test]
    fn z_test_degenerate_rules() {
        let a = McEstimate::exact(1.0);
        let b = McEstimate::exact(1.0);
        assert_eq!(two_sample_z(a, b, 4.0), (0.0, true));
        let c = McEstimate::exact(2.0);
        let (z, pass) = two_sample_z(a, c, 4.0);
        assert!(z.is_infinite() && !pass);
        // One deterministic side: z computed from the stochastic side only.
        let d = McEstimate {
            mean: 1.2,
            se: 0.1,
            n: 100,
        };
        let (z, pass) = two_sample_z(d, a, 4.0);
        assert!((z - 2.0).abs() < 1e-12);
        assert!(pass);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        // Perfectly spaced uniform sample: D = 1/(2n) shifted by grid offset.
        let n = 100;
        let sample: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic_sorted(&sample, |x| x);
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_disjoint() {
        let a = vec![0.0, 1.0, 2.0];
        let b = vec![3.0, 4.0, 5.0];
        assert!((ks_two_sample_sorted(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_merges_small_bins() {
        let observed = [50.0, 30.0, 15.0, 3.0, 2.0];
        let expected = [50.0, 30.0, 15.0, 3.0, 2.0];
        let (stat, dof, p) = chi_square_gof(&observed, &expected, 5.0);
        assert_eq!(stat, 0.0);
        assert_eq!(dof, 3);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(64);
        // integral of q(1-q) over [0,1] = 1/6 (used by the fork operator)
        let val: f64 = x.iter().zip(&w).map(|(&q, &wi)| wi * q * (1.0 - q)).sum();
        assert!((val - 1.0 / 6.0).abs() < 1e-14);
        let val7: f64 = x.iter().zip(&w).map(|(&q, &wi)| wi * q.powi(7)).sum();
        assert!((val7 - 0.125).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_exact_on_linear() {
        let vals: Vec<f64> = (0..65).map(|i| 2.0 * i as f64 / 64.0).collect();
        assert!((trapezoid_uniform(&vals, 0.0, 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        let a = normal_cdf(-1.3, 0.0, 1.0);
        let b = normal_cdf(1.3, 0.0, 1.0);
        assert!((a + b - 1.0).abs() < 1e-14);
    }

    #[test]
    fn batch_means_reports_wider_se_for_correlated_series() {
        // AR(1)-ish deterministic ramp: batch means must not collapse se to 0.
        let series: Vec<f64> = (0..4096).map(|i| ((i / 128) % 8) as f64).collect();
        let est = batch_means(&series, 32).unwrap();
        assert!(est.se > 0.0);
        assert!((est.mean - 3.5).abs() < 1e-12);
    }
}
