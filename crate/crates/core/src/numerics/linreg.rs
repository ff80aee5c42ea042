//! Ordinary / weighted least squares with a conjugate posterior draw.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::logistic::check_rank;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    /// Residual variance with `n - k` divisor.
    pub sigma2: f64,
    pub rmse: f64,
    pub n: usize,
    /// `(Xᵀ W X)⁻¹`.
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }

    pub fn df(&self) -> f64 {
        (self.n as f64 - self.coefficients.len() as f64).max(1.0)
    }

    /// Coefficient covariance `σ² (XᵀX)⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.xtx_inv * self.sigma2
    }

    /// Draw `(β, σ²)` from the non-informative-prior posterior:
    /// `σ² ~ (n−k)s² / χ²_{n−k}`, `β | σ² ~ N(β̂, σ²(XᵀX)⁻¹)`.
    pub fn posterior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, f64) {
        let df = self.df();
        let chi: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
        let s2 = if self.sigma2 > 0.0 {
            df * self.sigma2 / chi.max(1e-300)
        } else {
            0.0
        };
        let k = self.coefficients.len();
        let chol = (&self.xtx_inv * s2 + DMatrix::identity(k, k) * 1e-14)
            .cholesky()
            .map(|c| c.l());
        let beta = match chol {
            Some(l) => {
                let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.coefficients + l * z
            }
            None => self.coefficients.clone(),
        };
        (beta, s2)
    }
}

/// Weighted least squares of `y` on `design` (include an intercept column
/// explicitly).
pub fn fit_ols(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<OlsFit> {
    let n = design.nrows();
    let k = design.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < k {
        return Err(Error::RankDeficient);
    }
    let ones = vec![1.0; n];
    let w: &[f64] = weights.unwrap_or(&ones);
    check_rank(design, w)?;
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for i in 0..n {
        let row = design.row(i).transpose();
        xtx.ger(w[i], &row, &row, 1.0);
        xty.axpy(w[i] * y[i], &row, 1.0);
    }
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();
    let mut ssr = 0.0;
    let mut sw = 0.0;
    for i in 0..n {
        let r = y[i] - design.row(i).transpose().dot(&beta);
        ssr += w[i] * r * r;
        sw += w[i];
    }
    let df = (n as f64 - k as f64).max(1.0);
    let sigma2 = ssr / df * (n as f64 / sw.max(1e-300));
    Ok(OlsFit {
        coefficients: beta,
        sigma2,
        rmse: (ssr / sw.max(1e-300)).sqrt(),
        n,
        xtx_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let d = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let f = fit_ols(&d, &y, None).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((f.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(f.rmse < 1e-12);
    }
}
