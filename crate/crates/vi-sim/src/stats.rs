//! Summary statistics and distribution functions shared across the crate.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty slice");
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    assert!(xs.len() >= 2, "variance needs at least two observations");
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Unbiased sample covariance (denominator `n - 1`).
pub fn sample_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "covariance needs equal-length slices");
    assert!(xs.len() >= 2, "covariance needs at least two observations");
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pearson correlation; `None` when either slice has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let vx = sample_variance(xs);
    let vy = sample_variance(ys);
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(sample_covariance(xs, ys) / (vx * vy).sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Standard normal quantile. Panics outside `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must lie in (0, 1)");
    Normal::standard().inverse_cdf(p)
}

/// Upper tail `P(T > t)` of Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    assert!(dof > 0.0, "degrees of freedom must be positive");
    StudentsT::new(0.0, 1.0, dof).expect("valid t distribution").sf(t)
}

/// Two-sided p-value for a t statistic.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    2.0 * student_t_sf(t.abs(), dof)
}
