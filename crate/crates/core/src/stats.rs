//! Small statistics toolkit: moment estimates with standard errors,
//! empirical quantiles, Kolmogorov-Smirnov distances and p-values, and the
//! special functions the oracles need.

use serde::{Deserialize, Serialize};

/// A point estimate with its standard error and sample size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn new(value: f64, se: f64, n: usize) -> Self {
        Estimate { value, se, n }
    }

    /// Sample mean with SE = s/sqrt(n).
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate::new(f64::NAN, f64::NAN, 0);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate::new(mean, f64::INFINITY, 1);
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate::new(mean, (var / n as f64).sqrt(), n)
    }

    /// |value - target| <= k * se
    pub fn within_k_se(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    assert!(n >= 2, "variance needs at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Variance estimate with its own (large-sample) standard error,
/// SE(s^2) ~ s^2 * sqrt(2/(n-1)).
pub fn variance_estimate(xs: &[f64]) -> Estimate {
    let v = sample_variance(xs);
    let n = xs.len();
    Estimate::new(v, v * (2.0 / (n - 1) as f64).sqrt(), n)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median of a sample.
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Neumaier compensated summation. Used where long accumulations must not
/// drift (clock processes, piecewise integrals).
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One-sample Kolmogorov-Smirnov distance against a CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    assert!(!xs.is_empty());
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty());
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Approximate p-value for a one-sample KS distance at sample size n.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// Approximate p-value for a two-sample KS distance (effective sample size).
/// Conservative when the samples carry ties (discrete data).
pub fn ks_two_sample_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of a centered Gaussian with the given variance.
#[inline]
pub fn gaussian_cdf(x: f64, variance: f64) -> f64 {
    normal_cdf(x / variance.sqrt())
}

/// Modified Bessel function of the first kind, integer order, by its
/// ascending series. Accurate to ~1e-15 for the small arguments the kernel
/// oracles use.
pub fn bessel_i(order: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
    }
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= half * half / (k * (k + order as f64));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
        if k > 1000.0 {
            break;
        }
    }
    sum
}

/// Transition kernel of the continuous-time walk that jumps +-1 each at rate
/// `rate`: P(X_t = x0 + d) = exp(-2 rate t) I_|d|(2 rate t).
pub fn constant_rate_kernel(rate: f64, t: f64, displacement: i64) -> f64 {
    let a = 2.0 * rate * t;
    (-a).exp() * bessel_i(displacement.unsigned_abs() as u32, a)
}

/// Upper tail P(Poisson(mean) >= k).
pub fn poisson_upper_tail(mean: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // sum pmf upward from k until negligible
    let mut log_p = -mean + (k as f64) * mean.ln() - ln_factorial(k);
    let mut term = log_p.exp();
    let mut sum = 0.0;
    let mut j = k;
    loop {
        sum += term;
        j += 1;
        log_p += mean.ln() - (j as f64).ln();
        term = log_p.exp();
        if term < sum * 1e-17 && j > k + 10 {
            break;
        }
        if j > k + 10_000_000 {
            break;
        }
    }
    sum.min(1.0)
}

fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        return 0.0;
    }
    // Stirling with correction terms; exact enough for tail bounds.
    let kf = k as f64;
    if k < 16 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        kf * kf.ln() - kf + 0.5 * (2.0 * std::f64::consts::PI * kf).ln() + 1.0 / (12.0 * kf)
            - 1.0 / (360.0 * kf.powi(3))
    }
}

/// Lag-1 autocorrelation of a sequence.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    assert!(n >= 3);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    if var == 0.0 {
        return 0.0;
    }
    let cov = xs
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Substream;

    #[test]
    fn estimate_from_samples() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((e.value - 2.5).abs() < 1e-12);
        assert_eq!(e.n, 4);
    }

    #[test]
    fn quantile_endpoints() {
        let xs = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 3.0);
        assert_eq!(median(&xs), 2.0);
    }

    #[test]
    fn ks_uniform_sample_passes() {
        let mut s = Substream::new(11);
        let xs: Vec<f64> = (0..10_000).map(|_| s.next_f64()).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!(ks_p_value(d, xs.len()) > 0.01, "d = {d}");
    }

    #[test]
    fn ks_detects_shift() {
        let mut s = Substream::new(12);
        let xs: Vec<f64> = (0..5_000).map(|_| s.next_f64()).collect();
        let ys: Vec<f64> = (0..5_000).map(|_| s.next_f64() + 0.2).collect();
        let d = ks_two_sample(&xs, &ys);
        assert!(ks_two_sample_p_value(d, xs.len(), ys.len()) < 1e-6);
    }

    #[test]
    fn ks_two_sample_same_distribution() {
        let mut s = Substream::new(13);
        let xs: Vec<f64> = (0..5_000).map(|_| s.next_f64()).collect();
        let ys: Vec<f64> = (0..5_000).map(|_| s.next_f64()).collect();
        let d = ks_two_sample(&xs, &ys);
        assert!(ks_two_sample_p_value(d, 5000, 5000) > 0.01, "d = {d}");
    }

    #[test]
    fn ks_two_sample_hand_value() {
        // From each step function: max gap 0.25
        let xs = [1.0, 1.0, 4.0, 4.0];
        let ys = [1.0, 1.0, 1.0, 4.0];
        assert!((ks_two_sample(&xs, &ys) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) + normal_cdf(-1.0) - 1.0).abs() < 1e-14);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn bessel_known_values() {
        // I_0(1) = 1.2660658777520083..., I_1(1) = 0.5651591039924850...
        assert!((bessel_i(0, 1.0) - 1.266_065_877_752_008_3).abs() < 1e-14);
        assert!((bessel_i(1, 1.0) - 0.565_159_103_992_485).abs() < 1e-14);
    }

    #[test]
    fn kernel_sums_to_one() {
        let total: f64 = (-200i64..=200)
            .map(|d| constant_rate_kernel(0.5, 1.0, d))
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "total {total}");
    }

    #[test]
    fn poisson_tail_sane() {
        assert!((poisson_upper_tail(1.0, 1) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(poisson_upper_tail(1.0, 50) < 1e-40);
    }

    #[test]
    fn kahan_compensates() {
        let mut k = Kahan::new();
        for _ in 0..1_000_000 {
            k.add(0.1);
        }
        assert!((k.value() - 100_000.0).abs() < 1e-9);
    }

    #[test]
    fn autocorr_of_alternating_is_negative() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(lag1_autocorrelation(&xs) < -0.9);
    }
}
