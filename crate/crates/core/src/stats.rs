//! Streaming moments, binomial confidence intervals and a normality test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Single-pass mean and variance (Welford), mergeable across partitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std() / (self.n as f64).sqrt()
        }
    }
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() < 2 { 0.0 } else { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) };
    (m, v)
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AndersonDarling {
    /// Statistic with the small-sample correction for estimated mean and variance.
    pub statistic: f64,
    pub p_value: f64,
}

/// Anderson-Darling test of normality with mean and variance estimated from the sample.
pub fn anderson_darling(xs: &[f64]) -> AndersonDarling {
    let n = xs.len();
    let (m, v) = mean_and_variance(xs);
    let sd = v.sqrt();
    let mut y: Vec<f64> = xs.iter().map(|x| (x - m) / sd).collect();
    y.sort_by(f64::total_cmp);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let lo = std_normal.cdf(y[i]).max(1e-300);
        let hi = (1.0 - std_normal.cdf(y[n - 1 - i])).max(1e-300);
        s += (2 * i + 1) as f64 * (lo.ln() + hi.ln());
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p_value = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    AndersonDarling { statistic: a, p_value: p_value.clamp(0.0, 1.0) }
}

/// Critical value of the corrected statistic at the 1% level.
pub const AD_CRITICAL_1PCT: f64 = 1.035;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn streaming_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..57).map(|_| 1e6 + rng.gen::<f64>()).collect();
        let mut a = RunningStats::default();
        let mut b = RunningStats::default();
        for (i, &x) in xs.iter().enumerate() {
            if i < 20 { a.push(x) } else { b.push(x) }
        }
        a.merge(&b);
        let (m, v) = mean_and_variance(&xs);
        assert!(((a.mean - m) / m).abs() < 1e-12);
        assert!(((a.variance() - v) / v).abs() < 1e-10);
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.27753).abs() < 1e-4);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.40383).abs() < 1e-4 && (hi - 0.59617).abs() < 1e-4);
    }

    #[test]
    fn wilson_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut covered = 0;
        for _ in 0..100 {
            let k = (0..5000).filter(|_| rng.gen::<f64>() < 0.25).count() as u64;
            let (lo, hi) = wilson_interval(k, 5000, Z95);
            covered += u32::from(lo <= 0.25 && 0.25 <= hi);
        }
        assert!(covered >= 93, "{covered}");
    }

    #[test]
    fn normal_sample_passes_and_exponential_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        assert!(anderson_darling(&xs).statistic < AD_CRITICAL_1PCT);
        let ys: Vec<f64> = (0..500).map(|_| -rng.gen::<f64>().ln()).collect();
        let ad = anderson_darling(&ys);
        assert!(ad.statistic > AD_CRITICAL_1PCT && ad.p_value < 0.01);
    }
}
