//! Weighted Gaussian kernel density estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeResult {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub weighted_mean: f64,
}

fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("KDE weights must be finite and non-negative".into()));
    }
    let s: f64 = weights.iter().sum();
    if s <= 0.0 {
        return Err(Error::AllZeroProbabilities);
    }
    Ok(weights.iter().map(|w| w / s).collect())
}

fn weighted_quantile(sorted: &[(f64, f64)], q: f64) -> f64 {
    let mut acc = 0.0;
    for &(v, w) in sorted {
        acc += w;
        if acc >= q - 1e-15 {
            return v;
        }
    }
    sorted.last().map(|p| p.0).unwrap_or(f64::NAN)
}

/// Silverman bandwidth `0.9·min(sd, IQR/1.34)·n_eff^(−1/5)` with the
/// effective sample size `1/Σw²`.
pub fn silverman_bandwidth(values: &[f64], w: &[f64]) -> Result<f64> {
    let m: f64 = values.iter().zip(w).map(|(v, wi)| v * wi).sum();
    let var: f64 = values.iter().zip(w).map(|(v, wi)| wi * (v - m).powi(2)).sum();
    let sd = var.sqrt();
    let mut pairs: Vec<(f64, f64)> = values.iter().cloned().zip(w.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let iqr = weighted_quantile(&pairs, 0.75) - weighted_quantile(&pairs, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let n_eff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let h = 0.9 * spread * n_eff.powf(-0.2);
    if !(h > 0.0) {
        return Err(Error::DegenerateSupport);
    }
    Ok(h)
}

fn check_support(values: &[f64], w: &[f64]) -> Result<()> {
    let first = values.first().ok_or(Error::DegenerateSupport)?;
    if values.iter().all(|v| v == first) {
        return Err(Error::DegenerateSupport);
    }
    if values.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Density of the weighted sample at each grid point.
pub fn weighted_kde(values: &[f64], weights: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    check_support(values, weights)?;
    let w = normalized(weights)?;
    let h = silverman_bandwidth(values, &w)?;
    Ok(eval(values, &w, h, grid))
}

fn eval(values: &[f64], w: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|g| {
            values
                .iter()
                .zip(w)
                .filter(|(_, wi)| **wi > 0.0)
                .map(|(v, wi)| {
                    let u = (g - v) / h;
                    wi * INV_SQRT_2PI * (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                / h
        })
        .collect()
}

/// KDE on an evenly spaced grid spanning the data range ± 3 bandwidths.
pub fn kde_grid(values: &[f64], weights: &[f64], points: usize) -> Result<KdeResult> {
    check_support(values, weights)?;
    let w = normalized(weights)?;
    let h = silverman_bandwidth(values, &w)?;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let points = points.max(2);
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let density = eval(values, &w, h, &grid);
    Ok(KdeResult {
        weighted_mean: values.iter().zip(&w).map(|(v, wi)| v * wi).sum(),
        grid,
        density,
        bandwidth: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapz(x: &[f64], y: &[f64]) -> f64 {
        x.windows(2)
            .zip(y.windows(2))
            .map(|(a, b)| (a[1] - a[0]) * (b[0] + b[1]) / 2.0)
            .sum()
    }

    fn sample() -> (Vec<f64>, Vec<f64>) {
        let v: Vec<f64> = (0..60).map(|i| ((i * 37) % 23) as f64 / 3.0 + (i as f64).sin()).collect();
        let w: Vec<f64> = (0..60).map(|i| 1.0 + (i % 5) as f64).collect();
        (v, w)
    }

    #[test]
    fn integrates_to_one_and_preserves_mean() {
        let (v, w) = sample();
        let r = kde_grid(&v, &w, 4001).unwrap();
        assert!((trapz(&r.grid, &r.density) - 1.0).abs() < 1e-3);
        let xf: Vec<f64> = r.grid.iter().zip(&r.density).map(|(g, d)| g * d).collect();
        assert!((trapz(&r.grid, &xf) - r.weighted_mean).abs() < 1e-3);
    }

    #[test]
    fn uniform_weights_match_unweighted() {
        let (v, _) = sample();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 5.0).collect();
        let a = weighted_kde(&v, &vec![1.0 / 60.0; 60], &grid).unwrap();
        let b = weighted_kde(&v, &vec![7.0; 60], &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrated_weight_gives_mode() {
        let v = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let w = vec![1e-9, 1e-9, 1.0, 1e-9, 1e-9];
        let r = kde_grid(&v, &w, 2001).unwrap();
        let (imax, _) = r
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
        assert!((r.grid[imax] - 2.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_values() {
        assert_eq!(weighted_kde(&[1.0, 1.0], &[0.5, 0.5], &[1.0]).unwrap_err(), Error::DegenerateSupport);
    }
}
