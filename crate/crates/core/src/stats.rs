//! Experiment statistics: two-sample Student's t-test, Bonferroni
//! correction, and the uniformity tests used to validate the lighting
//! sampler (chi-square, Kolmogorov-Smirnov).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Result of a two-sided pooled-variance t-test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Set when the pooled variance is zero while the means differ; the
    /// reported p of 0 is then a convention, not a computed tail.
    pub degenerate_variance: bool,
}

/// Two-sided Student's t-test with pooled variance;
/// df = n_a + n_b - 2.
pub fn two_sample_ttest(group_a: &[f64], group_b: &[f64]) -> Result<TTest> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::numeric(
            "two_sample_ttest",
            "each group needs at least two values",
        ));
    }
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let (ma, mb) = (mean(group_a), mean(group_b));
    let ssq = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let df = group_a.len() + group_b.len() - 2;
    let pooled = (ssq(group_a, ma) + ssq(group_b, mb)) / df as f64;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();

    if se == 0.0 {
        let identical = ma == mb;
        return Ok(TTest {
            t: if identical { 0.0 } else { f64::INFINITY },
            df,
            p: if identical { 1.0 } else { 0.0 },
            degenerate_variance: !identical,
        });
    }

    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::numeric("two_sample_ttest", e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest {
        t,
        df,
        p,
        degenerate_variance: false,
    })
}

/// Bonferroni adjustment: p_i * m capped at 1. Significance is judged
/// against the unadjusted alpha afterwards.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

/// Chi-square goodness-of-fit p-value against a uniform distribution over
/// `counts.len()` categories.
pub fn chi_square_uniform_p(counts: &[u64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::numeric("chi_square_uniform_p", "need at least 2 categories"));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::numeric("chi_square_uniform_p", "no observations"));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64)
        .map_err(|e| Error::numeric("chi_square_uniform_p", e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

/// Kolmogorov-Smirnov p-value for `samples` against the uniform
/// distribution on [lo, hi], using the asymptotic Kolmogorov tail.
pub fn ks_uniform_p(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if samples.is_empty() || hi <= lo {
        return Err(Error::numeric("ks_uniform_p", "empty sample or bad interval"));
    }
    let n = samples.len() as f64;
    let mut sorted: Vec<f64> = samples.iter().map(|&x| (x - lo) / (hi - lo)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let mut d: f64 = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        let cdf_lo = i as f64 / n;
        let cdf_hi = (i + 1) as f64 / n;
        d = d.max((u - cdf_lo).abs()).max((cdf_hi - u).abs());
    }
    Ok(kolmogorov_tail((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// Asymptotic Kolmogorov survival function
/// Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2).
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
