//! Weighted logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const REL_LL_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e3;
const SEPARATION_ETA: f64 = 35.0;
const RIDGE: f64 = 1e-8;
const RANK_RATIO: f64 = 1e-12;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first when the design carries an intercept column.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted iteration (non-decreasing).
    pub ll_trace: Vec<f64>,
    /// Whether the ridge fallback was needed on a near-singular system.
    pub ridge_used: bool,
    #[serde(skip)]
    information: Option<DMatrix<f64>>,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }

    /// Fitted probability for a full design row (including the intercept 1).
    pub fn predict(&self, row: &[f64]) -> f64 {
        expit(self.linear_predictor(row))
    }

    /// Probability for a covariate vector without the intercept entry.
    pub fn predict_x(&self, x: &[f64]) -> f64 {
        let eta = self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        expit(eta)
    }

    /// Inverse observed information at the estimate (asymptotic covariance).
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let info = self.information.as_ref().ok_or(Error::RankDeficient)?;
        let k = info.nrows();
        let reg = info + DMatrix::identity(k, k) * RIDGE;
        reg.cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::RankDeficient)
    }

    /// A fit with fixed coefficients (used for constant models).
    pub fn fixed(coefficients: Vec<f64>) -> LogisticFit {
        LogisticFit {
            coefficients,
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
            ll_trace: Vec::new(),
            ridge_used: false,
            information: None,
        }
    }
}

fn log_lik(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((e, yi), wi)| wi * (yi * e - log1pexp(*e)))
        .sum()
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    if let Some(c) = a.clone().cholesky() {
        let sol = c.solve(b);
        if sol.iter().all(|v| v.is_finite()) {
            return Some((sol, false));
        }
    }
    let k = a.nrows();
    let scale = (a.trace() / k as f64).max(1.0);
    let reg = a + DMatrix::identity(k, k) * (RIDGE * scale);
    reg.cholesky().map(|c| (c.solve(b), true))
}

/// Rank check on the weighted Gram matrix `Xᵀ W X`.
pub(crate) fn check_rank(x: &DMatrix<f64>, w: &[f64]) -> Result<()> {
    let k = x.ncols();
    let mut g = DMatrix::zeros(k, k);
    for (i, row) in x.row_iter().enumerate() {
        if w[i] > 0.0 {
            g.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
    }
    let eig = g.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min / max < RANK_RATIO {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Maximizes the (weighted) Bernoulli log-likelihood.
///
/// Responses may be fractional in `[0, 1]` (soft labels); weights must be
/// non-negative. Each iteration is step-halved so the log-likelihood never
/// decreases.
pub fn fit_logistic(design: &DMatrix<f64>, response: &[f64], weights: Option<&[f64]>) -> Result<LogisticFit> {
    let n = design.nrows();
    let k = design.ncols();
    if response.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: response.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDataset("logistic weights must be finite and non-negative".into()));
        }
    }
    if response.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidDataset("logistic response outside [0, 1]".into()));
    }
    let ones = vec![1.0; n];
    let w: &[f64] = weights.unwrap_or(&ones);
    check_rank(design, w)?;

    let mut beta = DVector::zeros(k);
    let mut ll = log_lik(design, response, w, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut ridge_used = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(k, k);

    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = design * &beta;
        let mut score = DVector::zeros(k);
        info.fill(0.0);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let p = expit(eta[i]);
            let row = design.row(i).transpose();
            score.axpy(w[i] * (response[i] - p), &row, 1.0);
            info.ger(w[i] * p * (1.0 - p), &row, &row, 1.0);
        }
        if score.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        let (step, ridged) = solve_spd(&info, &score).ok_or(Error::RankDeficient)?;
        ridge_used |= ridged;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cll = log_lik(design, response, w, &cand);
            if cll.is_finite() && cll >= ll - 1e-12 * (1.0 + ll.abs()) {
                accepted = Some((cand, cll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cll)) = accepted else {
            // no ascent direction available: at the optimum up to rounding
            converged = true;
            break;
        };
        let new_ll = cll.max(ll);
        let rel = (new_ll - ll).abs() / (ll.abs() + 1e-300);
        beta = cand;
        ll = new_ll;
        trace.push(ll);
        if beta.norm() > SEPARATION_NORM {
            return Err(Error::Separation);
        }
        if rel < REL_LL_TOL {
            converged = true;
            break;
        }
    }

    if !beta.iter().all(|b| b.is_finite()) {
        return Err(Error::Separation);
    }
    let eta = design * &beta;
    let max_eta = eta
        .iter()
        .zip(w)
        .filter(|(_, wi)| **wi > 0.0)
        .map(|(e, _)| e.abs())
        .fold(0.0, f64::max);
    if max_eta > SEPARATION_ETA {
        return Err(Error::Separation);
    }
    // refresh information at the final estimate for the covariance
    info.fill(0.0);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let p = expit(eta[i]);
        let row = design.row(i).transpose();
        info.ger(w[i] * p * (1.0 - p), &row, &row, 1.0);
    }

    Ok(LogisticFit {
        coefficients: beta.iter().cloned().collect(),
        converged,
        iterations,
        log_likelihood: ll,
        ll_trace: trace,
        ridge_used,
        information: Some(info),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn intercept_only(y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(y.len(), 1, 1.0)
    }

    #[test]
    fn half_ones_gives_zero() {
        let y: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let f = fit_logistic(&intercept_only(&y), &y, None).unwrap();
        assert!(f.coefficients[0].abs() < 1e-10);
        assert!(f.converged);
    }

    #[test]
    fn three_quarters_gives_ln3() {
        let y: Vec<f64> = (0..400).map(|i| (i % 4 != 0) as u8 as f64).collect();
        let f = fit_logistic(&intercept_only(&y), &y, None).unwrap();
        assert!((f.coefficients[0] - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn recovers_generating_coefficients() {
        let mut rng = stream(11, &[]);
        let n = 50_000;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            let p = expit(-0.5 + 1.2 * xi);
            x.push(xi);
            y.push((rng.random::<f64>() < p) as u8 as f64);
        }
        let d = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let f = fit_logistic(&d, &y, None).unwrap();
        assert!((f.coefficients[0] + 0.5).abs() < 0.05);
        assert!((f.coefficients[1] - 1.2).abs() < 0.05);
    }

    #[test]
    fn perfect_separation_detected() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 100.0 - 1.0 + 0.005).collect();
        let y: Vec<f64> = x.iter().map(|v| (*v > 0.0) as u8 as f64).collect();
        let d = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        assert_eq!(fit_logistic(&d, &y, None).unwrap_err(), Error::Separation);
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let d = DMatrix::from_fn(50, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let y: Vec<f64> = (0..50).map(|i| (i % 3 == 0) as u8 as f64).collect();
        assert_eq!(fit_logistic(&d, &y, None).unwrap_err(), Error::RankDeficient);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn log_likelihood_never_decreases(seed in 0u64..10_000, b0 in -2.0f64..2.0, b1 in -2.0f64..2.0) {
            let mut rng = stream(seed, &[]);
            let n = 300;
            let x: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let y: Vec<f64> = x.iter().map(|xi| (rng.random::<f64>() < expit(b0 + b1 * xi)) as u8 as f64).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
            let d = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
            if let Ok(f) = fit_logistic(&d, &y, Some(&w)) {
                for pair in f.ll_trace.windows(2) {
                    prop_assert!(pair[1] >= pair[0] - 1e-12 * (1.0 + pair[0].abs()));
                }
                prop_assert!(f.coefficients.iter().all(|c| c.is_finite()));
            }
        }
    }
}
