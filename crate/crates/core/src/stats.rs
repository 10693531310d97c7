//! Statistical tests used by the equilibrium checks: one-sample
//! Kolmogorov-Smirnov in 1D and a binned chi-square in 2D.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided one-sample KS statistic of `samples` against a model CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i as f64 + 1.0) / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2},
/// evaluated at lambda = sqrt(n) * d (with the usual small-sample correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> KsResult {
    let d = ks_statistic(&mut samples, cdf);
    KsResult { statistic: d, p_value: ks_p_value(d, samples.len()) }
}

pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected counts.
/// Bins with expected count below 5 are pooled into their neighbor.
pub fn chi2_test(observed: &[f64], expected: &[f64]) -> Chi2Result {
    assert_eq!(observed.len(), expected.len());
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut obs_pool = 0.0;
    let mut exp_pool = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        obs_pool += o;
        exp_pool += e;
        if exp_pool >= 5.0 {
            groups.push((obs_pool, exp_pool));
            obs_pool = 0.0;
            exp_pool = 0.0;
        }
    }
    // fold a trailing under-populated pool into the last group rather than
    // letting a tiny expected value dominate the statistic
    if obs_pool > 0.0 || exp_pool > 0.0 {
        if let Some(last) = groups.last_mut() {
            last.0 += obs_pool;
            last.1 += exp_pool;
        } else {
            groups.push((obs_pool, exp_pool));
        }
    }
    let mut stat = 0.0;
    for &(o, e) in &groups {
        stat += (o - e).powi(2) / e;
    }
    let dof = groups.len().saturating_sub(1).max(1);
    let chi = ChiSquared::new(dof as f64).unwrap();
    Chi2Result { statistic: stat, dof, p_value: 1.0 - chi.cdf(stat) }
}
