//! Percentile bootstrap with per-replicate random streams.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{stream, tag};
use super::stats;
use crate::data::TrialDataset;
use crate::error::{Error, Result};

/// How replicates are drawn from the observed records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Resample within each arm, keeping arm sizes fixed.
    #[default]
    StratifiedByArm,
    /// Resample from the whole dataset.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    /// Standard deviation of the replicates.
    pub se: f64,
}

const BOOT: u64 = tag("bootstrap");

/// Record indices for one resample.
pub fn resample_indices(ds: &TrialDataset, rng: &mut ChaCha8Rng, scheme: Resampling) -> Vec<usize> {
    let n = ds.len();
    match scheme {
        Resampling::Pooled => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Resampling::StratifiedByArm => {
            let mut out = Vec::with_capacity(n);
            for arm in 0..2u8 {
                let members: Vec<usize> = ds
                    .records()
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.trt == arm)
                    .map(|(i, _)| i)
                    .collect();
                let m = members.len();
                for _ in 0..m {
                    out.push(members[rng.random_range(0..m)]);
                }
            }
            out
        }
    }
}

/// Percentile interval with endpoints at the order statistics
/// `round(B·a/2)` and `round(B·(1 − a/2))` (1-based), `a = 1 − level`.
pub fn percentile_ci(replicates: &[f64], level: f64) -> (f64, f64) {
    let mut s: Vec<f64> = replicates.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let b = s.len() as f64;
    let a = 1.0 - level;
    let lo = ((b * a / 2.0).round() as usize).clamp(1, s.len());
    let hi = ((b * (1.0 - a / 2.0)).round() as usize).clamp(1, s.len());
    (s[lo - 1], s[hi - 1])
}

/// Bootstrap with a replicate function receiving `(replicate, resample)`.
/// Replicates are evaluated in parallel; each owns its random stream so the
/// output is identical for any thread count.
pub fn bootstrap_with<T, F>(ds: &TrialDataset, b: usize, seed: u64, scheme: Resampling, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &TrialDataset) -> T + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[BOOT, r as u64]);
            let idx = resample_indices(ds, &mut rng, scheme);
            f(r, &ds.subset(&idx))
        })
        .collect()
}

pub fn bootstrap<F>(
    ds: &TrialDataset,
    statistic: F,
    b: usize,
    seed: u64,
    level: f64,
    scheme: Resampling,
) -> Result<BootstrapResult>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidConfig("bootstrap needs B >= 2".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {level} not in (0, 1)")));
    }
    let out = bootstrap_with(ds, b, seed, scheme, |_, d| statistic(d));
    let mut reps = Vec::with_capacity(b);
    for (r, v) in out.into_iter().enumerate() {
        match v {
            Ok(x) => reps.push(x),
            Err(e) => {
                return Err(Error::StatisticFailed {
                    replicate: r,
                    source: Box::new(e),
                })
            }
        }
    }
    let (lo, hi) = percentile_ci(&reps, level);
    Ok(BootstrapResult {
        se: stats::sd(&reps),
        ci_low: lo,
        ci_high: hi,
        level,
        replicates: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventCoding, OutcomeDirection, SubjectRecord};
    use rand_distr::StandardNormal;

    fn normal_ds(n: usize) -> TrialDataset {
        let mut rng = stream(5, &[]);
        let recs = (0..n)
            .map(|i| {
                let y: f64 = rng.sample(StandardNormal);
                SubjectRecord::new(i.to_string(), (i % 2) as u8, 0, Some(y), vec![])
            })
            .collect();
        TrialDataset::new(recs, vec![], vec![], EventCoding::default(), OutcomeDirection::LowerIsBetter).unwrap()
    }

    fn mean_y(d: &TrialDataset) -> Result<f64> {
        let y: Vec<f64> = d.records().iter().filter_map(|r| r.outcome).collect();
        Ok(stats::mean(&y))
    }

    #[test]
    fn constant_statistic() {
        let ds = normal_ds(20);
        let r = bootstrap(&ds, |_| Ok(3.5), 50, 1, 0.95, Resampling::Pooled).unwrap();
        assert_eq!((r.ci_low, r.ci_high), (3.5, 3.5));
    }

    #[test]
    fn order_statistics_for_b1000() {
        let reps: Vec<f64> = (1..=1000).rev().map(|v| v as f64).collect();
        assert_eq!(percentile_ci(&reps, 0.95), (25.0, 975.0));
    }

    #[test]
    fn clt_width() {
        let n = 10_000;
        let ds = normal_ds(n);
        let r = bootstrap(&ds, mean_y, 1000, 3, 0.95, Resampling::Pooled).unwrap();
        let width = r.ci_high - r.ci_low;
        let target = 2.0 * 1.96 / (n as f64).sqrt();
        assert!((width / target - 1.0).abs() < 0.15, "width {width} target {target}");
    }

    #[test]
    fn statistic_failure_carries_index() {
        let ds = normal_ds(10);
        let e = bootstrap(&ds, |_| Err(Error::Separation), 5, 1, 0.9, Resampling::Pooled).unwrap_err();
        assert!(matches!(e, Error::StatisticFailed { replicate: 0, .. }));
    }

    #[test]
    fn identical_across_thread_counts() {
        let ds = normal_ds(200);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap(&ds, mean_y, 200, 9, 0.95, Resampling::StratifiedByArm).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.replicates.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.replicates.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
