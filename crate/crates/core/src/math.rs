//! Small numeric helpers shared across modules.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of N(mu, sigma^2) at x.
#[inline]
pub fn normal_logpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Log density of HalfNormal(0, scale^2) at x > 0. Includes the log 2
/// folding constant so the density integrates to one.
#[inline]
pub fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 + normal_logpdf(x, 0.0, scale)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// log(sum(exp(values))), stabilized by the maximum.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Quantile with linear interpolation between order statistics
/// (h = (n-1)p, the R type-7 rule). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
