//! Multinomial logistic regression on soft labels (Newton with step halving).
//!
//! Row sums are accumulated over fixed-size chunks in parallel and combined
//! in chunk order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialFit {
    /// One coefficient row per class; the reference row is all zeros.
    pub coefficients: Vec<Vec<f64>>,
    pub reference: usize,
}

impl MultinomialFit {
    pub fn zeros(classes: usize, k: usize, reference: usize) -> Self {
        MultinomialFit {
            coefficients: vec![vec![0.0; k]; classes],
            reference,
        }
    }

    pub fn classes(&self) -> usize {
        self.coefficients.len()
    }

    /// Log class probabilities for one design row.
    pub fn log_probs(&self, row: &[f64]) -> Vec<f64> {
        let eta: Vec<f64> = self
            .coefficients
            .iter()
            .map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum())
            .collect();
        let lse = log_sum_exp(&eta);
        eta.iter().map(|e| e - lse).collect()
    }

    pub fn probs(&self, row: &[f64]) -> Vec<f64> {
        self.log_probs(row).into_iter().map(f64::exp).collect()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Expected complete-data log-likelihood `Σ_i Σ_u r_iu log π_u(x_i)`.
pub fn soft_log_lik(fit: &MultinomialFit, design: &DMatrix<f64>, soft: &[Vec<f64>]) -> f64 {
    let n = design.nrows();
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            let mut row = vec![0.0; design.ncols()];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = design[(i, j)];
                }
                let lp = fit.log_probs(&row);
                for (u, r) in soft[i].iter().enumerate() {
                    if *r > 0.0 {
                        acc += r * lp[u];
                    }
                }
            }
            acc
        })
        .collect();
    parts.iter().sum()
}

/// One Newton step (with step halving) on the soft-label objective.
/// Returns the objective after the step.
pub fn newton_step(fit: &mut MultinomialFit, design: &DMatrix<f64>, soft: &[Vec<f64>]) -> Result<f64> {
    let n = design.nrows();
    let k = design.ncols();
    let classes = fit.classes();
    let free: Vec<usize> = (0..classes).filter(|&u| u != fit.reference).collect();
    let dim = free.len() * k;
    let parts: Vec<(DVector<f64>, DMatrix<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = DVector::zeros(dim);
            let mut h = DMatrix::zeros(dim, dim);
            let mut row = vec![0.0; k];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = design[(i, j)];
                }
                let p = fit.probs(&row);
                let s: f64 = soft[i].iter().sum();
                for (a, &ua) in free.iter().enumerate() {
                    let ra = soft[i][ua] - s * p[ua];
                    for j in 0..k {
                        g[a * k + j] += ra * row[j];
                    }
                    for (b, &ub) in free.iter().enumerate().skip(a) {
                        let wab = s * p[ua] * ((ua == ub) as u8 as f64 - p[ub]);
                        for j in 0..k {
                            for l in 0..k {
                                h[(a * k + j, b * k + l)] += wab * row[j] * row[l];
                            }
                        }
                    }
                }
            }
            (g, h)
        })
        .collect();
    let mut g = DVector::zeros(dim);
    let mut h = DMatrix::zeros(dim, dim);
    for (pg, ph) in parts {
        g += pg;
        h += ph;
    }
    // Fill the lower triangle.
    for a in 0..dim {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    let scale = (h.trace() / dim as f64).max(1e-12);
    let step = h
        .clone()
        .cholesky()
        .or_else(|| (h + DMatrix::identity(dim, dim) * (1e-8 * scale)).cholesky())
        .ok_or(Error::RankDeficient)?
        .solve(&g);
    let q0 = soft_log_lik(fit, design, soft);
    let old = fit.coefficients.clone();
    let mut t = 1.0;
    for _ in 0..40 {
        for (a, &ua) in free.iter().enumerate() {
            for j in 0..k {
                fit.coefficients[ua][j] = old[ua][j] + t * step[a * k + j];
            }
        }
        let q = soft_log_lik(fit, design, soft);
        if q.is_finite() && q >= q0 - 1e-12 * q0.abs().max(1.0) {
            return Ok(q.max(q0));
        }
        t *= 0.5;
    }
    fit.coefficients = old;
    Ok(q0)
}

/// Fits class coefficients to soft labels until the objective stalls.
pub fn fit_multinomial(
    design: &DMatrix<f64>,
    soft: &[Vec<f64>],
    reference: usize,
    start: Option<MultinomialFit>,
    max_iter: usize,
) -> Result<MultinomialFit> {
    let classes = soft.first().map(|r| r.len()).unwrap_or(0);
    if classes < 2 || reference >= classes {
        return Err(Error::InvalidConfig("multinomial fit needs at least two classes".into()));
    }
    let mut fit = start.unwrap_or_else(|| MultinomialFit::zeros(classes, design.ncols(), reference));
    let mut q = soft_log_lik(&fit, design, soft);
    for _ in 0..max_iter {
        let q1 = newton_step(&mut fit, design, soft)?;
        let done = (q1 - q).abs() <= 1e-10 * q.abs().max(1.0);
        q = q1;
        if done {
            break;
        }
    }
    if fit.coefficients.iter().flatten().any(|v| !v.is_finite() || v.abs() > 50.0) {
        return Err(Error::Separation);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_constant_class_shares() {
        // Intercept-only design: softmax of coefficients must match label means.
        let n = 300;
        let design = DMatrix::from_element(n, 1, 1.0);
        let soft: Vec<Vec<f64>> = (0..n)
            .map(|i| match i % 3 {
                0 => vec![1.0, 0.0, 0.0],
                1 => vec![0.2, 0.8, 0.0],
                _ => vec![0.0, 0.5, 0.5],
            })
            .collect();
        let fit = fit_multinomial(&design, &soft, 2, None, 50).unwrap();
        let p = fit.probs(&[1.0]);
        let want = [1.2 / 3.0, 1.3 / 3.0, 0.5 / 3.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(fit.coefficients[2], vec![0.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
