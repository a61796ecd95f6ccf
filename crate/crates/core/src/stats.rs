//! Small statistics toolkit: estimates, normal quantiles, regression,
//! bootstrap.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

/// A value with a standard error (0 for exact values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    /// `(self - other) / combined stderr`; infinite when both are exact
    /// and differ.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = libm::hypot(self.stderr, other.stderr);
        let diff = self.value - other.value;
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Inverse of [`normal_cdf`] for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Sample mean with its standard error.
pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    Estimate::new(mean(xs), libm::sqrt(variance(xs) / n))
}

/// Natural log of the binomial coefficient.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Result of a weighted least-squares line fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    /// Covariance of (intercept, slope).
    pub cov: f64,
    /// Root mean square of the unweighted residuals.
    pub rms: f64,
}

/// Weighted least squares with weights `w` (inverse variances). The
/// standard errors come from the weights alone, so they are only
/// meaningful when the weights are true inverse variances.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let rms = libm::sqrt(
        (0..n).map(|i| { let r = y[i] - intercept - slope * x[i]; r * r }).sum::<f64>() / n as f64,
    );
    Some(LineFit {
        intercept,
        slope,
        se_intercept: libm::sqrt(sxx / det),
        se_slope: libm::sqrt(sw / det),
        cov: -sx / det,
        rms,
    })
}

/// Ordinary least squares with residual-based standard errors.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    let ones = alloc::vec![1.0; n];
    let mut fit = weighted_line_fit(x, y, &ones)?;
    if n > 2 {
        let s2 = fit.rms * fit.rms * n as f64 / (n - 2) as f64;
        let s = libm::sqrt(s2);
        fit.se_intercept *= s;
        fit.se_slope *= s;
        fit.cov *= s2;
    }
    Some(fit)
}

/// Draw `reps` bootstrap resamples of `0..n` and evaluate `stat` on each.
pub fn bootstrap<R, F>(n: usize, reps: usize, rng: &mut R, mut stat: F) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> f64,
{
    let mut idx = alloc::vec![0usize; n];
    (0..reps)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect()
}

/// Empirical quantile (linear interpolation) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Sample standard deviation of bootstrap replicates.
pub fn bootstrap_stderr(reps: &[f64]) -> f64 {
    libm::sqrt(variance(reps))
}

/// Outcome of a one-sided statistical check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Violation,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Violation => "violation",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Result of checking a claim of the form `excess <= 0`.
///
/// `statistic` is the estimated excess, `[ci_lo, ci_hi]` a two-sided
/// interval whose lower end is a one-sided bound at `level`. The verdict is
/// a violation only when `ci_lo > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub verdict: Verdict,
    pub detail: String,
}

impl TestReport {
    /// Normal-theory report for an estimated excess.
    pub fn upper_claim(name: impl Into<String>, excess: Estimate, level: f64) -> Self {
        let z = normal_quantile(level);
        let lo = excess.value - z * excess.stderr;
        let hi = excess.value + z * excess.stderr;
        Self::from_interval(name, excess.value, excess.stderr, lo, hi, level)
    }

    /// Report from an explicit interval (bootstrap percentiles, exact margins).
    pub fn from_interval(name: impl Into<String>, statistic: f64, stderr: f64, lo: f64, hi: f64, level: f64) -> Self {
        let verdict = if lo.is_nan() || statistic.is_nan() {
            Verdict::Inconclusive
        } else if lo > 0.0 {
            Verdict::Violation
        } else {
            Verdict::Consistent
        };
        Self { name: name.into(), statistic, stderr, ci_lo: lo, ci_hi: hi, level, verdict, detail: String::new() }
    }

    pub fn inconclusive(name: impl Into<String>, detail: impl Into<String>, level: f64) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            stderr: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
            level,
            verdict: Verdict::Inconclusive,
            detail: detail.into(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn normal_quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-9);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: alloc::vec::Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let fit = line_fit(&x, &y).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn weighted_fit_stderr_matches_simulation() {
        // y = 1 + 3x + N(0, 0.1^2); the reported slope stderr should match the
        // spread of slopes over repeated fits.
        let mut rng = stream(5, 0, Purpose::Analysis);
        let x: alloc::vec::Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let w = alloc::vec![100.0; 20];
        let mut slopes = alloc::vec::Vec::new();
        let mut se = 0.0;
        for _ in 0..2000 {
            let y: alloc::vec::Vec<f64> = x
                .iter()
                .map(|v| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    1.0 + 3.0 * v + 0.1 * z
                })
                .collect();
            let fit = weighted_line_fit(&x, &y, &w).unwrap();
            se = fit.se_slope;
            slopes.push(fit.slope);
        }
        let sd = libm::sqrt(variance(&slopes));
        assert!((sd / se - 1.0).abs() < 0.1, "sd {sd} se {se}");
        assert!((mean(&slopes) - 3.0).abs() < 4.0 * se / libm::sqrt(2000.0));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
    }

    #[test]
    fn ln_choose_small() {
        assert!((libm::exp(ln_choose(10, 3)) - 120.0).abs() < 1e-9);
        assert_eq!(ln_choose(3, 5), f64::NEG_INFINITY);
    }
}
