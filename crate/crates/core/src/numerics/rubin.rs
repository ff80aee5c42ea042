//! Rubin's rules for pooling multiple-imputation estimates.

use serde::{Deserialize, Serialize};

use super::stats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub point: f64,
    pub within_var: f64,
    pub between_var: f64,
    pub total_var: f64,
    /// Rubin degrees of freedom; infinite when the between variance is 0.
    pub df: f64,
    pub ci: (f64, f64),
    pub m: usize,
    /// Set when `B = 0` and the normal interval was used.
    pub degenerate_between: bool,
}

pub fn rubin_pool(estimates: &[f64], variances: &[f64], level: f64) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidConfig("Rubin pooling needs m >= 2".into()));
    }
    if variances.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: variances.len(),
        });
    }
    if variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidConfig("variances must be non-negative".into()));
    }
    let point = stats::mean(estimates);
    let w = stats::mean(variances);
    let b = stats::var(estimates);
    let mf = m as f64;
    let total = w + (1.0 + 1.0 / mf) * b;
    let degenerate = b <= 0.0;
    let df = if degenerate {
        f64::INFINITY
    } else {
        (mf - 1.0) * (1.0 + w / ((1.0 + 1.0 / mf) * b)).powi(2)
    };
    let half = stats::t_crit(level, df) * total.sqrt();
    Ok(PooledEstimate {
        point,
        within_var: w,
        between_var: b,
        total_var: total,
        df,
        ci: (point - half, point + half),
        m,
        degenerate_between: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_estimates() {
        let p = rubin_pool(&[1.5; 4], &[0.2; 4], 0.95).unwrap();
        assert_eq!(p.point, 1.5);
        assert_eq!(p.total_var, 0.2);
        assert!(p.degenerate_between);
    }

    #[test]
    fn direct_arithmetic() {
        let p = rubin_pool(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.95).unwrap();
        assert_eq!(p.point, 2.0);
        assert_eq!(p.within_var, 1.0);
        assert_eq!(p.between_var, 1.0);
        assert!((p.total_var - 7.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn total_at_least_within(est in proptest::collection::vec(-10.0f64..10.0, 2..20), v in 0.0f64..5.0) {
            let vars = vec![v; est.len()];
            let p = rubin_pool(&est, &vars, 0.95).unwrap();
            prop_assert!(p.total_var >= p.within_var);
            prop_assert!(p.ci.0 <= p.point && p.point <= p.ci.1);
        }
    }
}
