//! Small descriptive-statistics helpers.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` divisor (0 for fewer than 2 values).
pub fn var(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn sd(x: &[f64]) -> f64 {
    var(x).sqrt()
}

/// Standard error of the mean.
pub fn sem(x: &[f64]) -> f64 {
    (var(x) / x.len() as f64).sqrt()
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

/// Linear-interpolation quantile (R type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&s, q)
}

/// Two-sided standard-normal critical value for `level`.
pub fn z_crit(level: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0)
}

/// Two-sided Student-t critical value; falls back to normal for `df = ∞`.
pub fn t_crit(level: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return z_crit(level);
    }
    StudentsT::new(0.0, 1.0, df)
        .expect("valid t")
        .inverse_cdf(0.5 + level / 2.0)
}

/// Normal-theory confidence interval `point ± z·se`.
pub fn wald_ci(point: f64, se: f64, level: f64) -> (f64, f64) {
    let z = z_crit(level);
    (point - z * se, point + z * se)
}
