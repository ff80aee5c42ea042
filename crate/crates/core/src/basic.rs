//! Assumption-light reference estimators: ITT, naive completers and the
//! instrumental-variable estimator of the complier effect.

use crate::data::{Arm, TrialDataset, ZeroMeans, Monotonicity};
use crate::error::{Error, Result};
use crate::numerics::stats;
use crate::report::{tags, EstimateReport};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Weak-denominator guard for [`cace_iv`].
pub const CACE_FLOOR: f64 = 0.01;

/// Outcome summary of one cell: values, mean, variance.
#[derive(Debug, Clone)]
pub(crate) struct CellStats {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl CellStats {
    pub fn of(values: &[f64]) -> Option<CellStats> {
        if values.is_empty() {
            return None;
        }
        Some(CellStats {
            n: values.len(),
            mean: stats::mean(values),
            var: if values.len() > 1 { stats::var(values) } else { 0.0 },
        })
    }

    pub fn se2(&self) -> f64 {
        self.var / self.n as f64
    }
}

/// Outcome stats in cell `(arm, s)`, or `EmptyStratumCell`.
pub(crate) fn cell(ds: &TrialDataset, arm: Arm, s: u8) -> Result<CellStats> {
    CellStats::of(&ds.cell_outcomes(arm, s))
        .ok_or_else(|| Error::EmptyStratumCell(format!("T={},S={s} has no observed outcomes", arm.bit())))
}

/// `Pr(S = 0 | T = arm)` over all records of the arm.
pub(crate) fn p_event_free(ds: &TrialDataset, arm: Arm) -> Result<f64> {
    let n = ds.arm_count(arm);
    if n == 0 {
        return Err(Error::EmptyArm { arm: arm.bit() });
    }
    let n0 = ds.records().iter().filter(|r| r.in_cell(arm, 0)).count();
    Ok(n0 as f64 / n as f64)
}

/// Records in `(arm, s)` with missing outcomes.
pub(crate) fn missing_in_cell(ds: &TrialDataset, arm: Arm, s: Option<u8>) -> usize {
    ds.records()
        .iter()
        .filter(|r| r.arm() == arm && s.map_or(true, |s| r.event == s) && r.outcome.is_none())
        .count()
}

/// Mean difference with a Welch standard error.
fn difference(method: &str, estimand: &str, t: &CellStats, c: &CellStats) -> EstimateReport {
    let point = t.mean - c.mean;
    let se = (t.se2() + c.se2()).sqrt();
    EstimateReport::new(method, estimand, point, t.n + c.n)
        .with_se(se, DEFAULT_LEVEL)
        .extra("mean_treated", t.mean)
        .extra("mean_control", c.mean)
        .extra("se_treated", t.se2().sqrt())
        .extra("se_control", c.se2().sqrt())
}

fn arm_outcomes(ds: &TrialDataset, arm: Arm) -> Vec<f64> {
    ds.records()
        .iter()
        .filter(|r| r.arm() == arm)
        .filter_map(|r| r.outcome)
        .collect()
}

/// `mean(Y | T=1) − mean(Y | T=0)`; records with missing `Y` are dropped.
pub fn itt_effect(ds: &TrialDataset) -> Result<EstimateReport> {
    let t = CellStats::of(&arm_outcomes(ds, Arm::Treated)).ok_or(Error::EmptyArm { arm: 1 })?;
    let c = CellStats::of(&arm_outcomes(ds, Arm::Control)).ok_or(Error::EmptyArm { arm: 0 })?;
    let dropped = missing_in_cell(ds, Arm::Treated, None) + missing_in_cell(ds, Arm::Control, None);
    let mut rep = difference("itt", "E[Y(1) - Y(0)]", &t, &c)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION])
        .extra("n_dropped_missing", dropped as f64);
    if dropped > 0 {
        rep.warn(format!("{dropped} records with missing outcome dropped"));
        rep = rep.assume(&[tags::MCAR_OUTCOME]);
    }
    Ok(rep)
}

/// Observed completers comparison `mean(Y|T=1,S=0) − mean(Y|T=0,S=0)`.
/// Descriptive only: conditioning on a post-randomization variable.
pub fn naive_completers(ds: &TrialDataset) -> Result<EstimateReport> {
    let t = cell(ds, Arm::Treated, 0)?;
    let c = cell(ds, Arm::Control, 0)?;
    let dropped = missing_in_cell(ds, Arm::Treated, Some(0)) + missing_in_cell(ds, Arm::Control, Some(0));
    let mut rep = difference("naive_completers", "E[Y|T=1,S=0] - E[Y|T=0,S=0]", &t, &c)
        .assume(&[tags::NON_CAUSAL])
        .extra("n_dropped_missing", dropped as f64);
    if dropped > 0 {
        rep.warn(format!("{dropped} event-free records with missing outcome dropped"));
        rep = rep.assume(&[tags::MCAR_OUTCOME]);
    }
    Ok(rep)
}

/// Per-arm `(mean Y, mean D, cov(Y,D), var Y, var D, n)` over records with
/// an outcome, where `D = S` is the treatment actually taken.
fn arm_moments(ds: &TrialDataset, arm: Arm) -> Option<[f64; 6]> {
    let pairs: Vec<(f64, f64)> = ds
        .records()
        .iter()
        .filter(|r| r.arm() == arm)
        .filter_map(|r| r.outcome.map(|y| (y, r.event as f64)))
        .collect();
    let n = pairs.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let my = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let md = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let denom = (nf - 1.0).max(1.0);
    let (mut syy, mut sdd, mut syd) = (0.0, 0.0, 0.0);
    for (y, d) in &pairs {
        syy += (y - my) * (y - my);
        sdd += (d - md) * (d - md);
        syd += (y - my) * (d - md);
    }
    Some([my, md, syd / denom, syy / denom, sdd / denom, nf])
}

/// IV (Wald) estimator of the complier effect, `ITT / π̂₀₁` with
/// `π̂₀₁ = p₁ + p₀ − 1`, where `p₁ = Pr(S=1|T=1)` and `p₀ = Pr(S=0|T=0)`
/// are the arm-wise rates of taking the assigned treatment.
///
/// Requires the treatment-taken coding with no defiers. `floor` escalates a
/// weak complier share to `PositivityViolation`.
pub fn cace_iv(ds: &TrialDataset, floor: f64) -> Result<EstimateReport> {
    let coding = ds.coding();
    if coding.zero_means != ZeroMeans::TakingExperimental {
        return Err(Error::PreconditionFailed(
            "cace_iv needs S coded as treatment actually taken (zero_means = taking_experimental)".into(),
        ));
    }
    if coding.monotonicity != Monotonicity::S1GeS0 {
        return Err(Error::PreconditionFailed(
            "cace_iv needs monotonicity s1_ge_s0 (no defiers)".into(),
        ));
    }
    let p1 = 1.0 - p_event_free(ds, Arm::Treated)?;
    let p0 = p_event_free(ds, Arm::Control)?;
    let pi01 = p1 + p0 - 1.0;
    if pi01 <= 0.0 {
        return Err(Error::PositivityViolation(format!(
            "estimated complier share p1 + p0 - 1 = {pi01:.6} is not positive"
        )));
    }
    if pi01 < floor {
        return Err(Error::PositivityViolation(format!(
            "estimated complier share {pi01:.6} is below the floor {floor}"
        )));
    }
    let itt = itt_effect(ds)?;
    let point = itt.point / pi01;

    // Delta method for a ratio of two differences of arm means.
    let m1 = arm_moments(ds, Arm::Treated).ok_or(Error::EmptyArm { arm: 1 })?;
    let m0 = arm_moments(ds, Arm::Control).ok_or(Error::EmptyArm { arm: 0 })?;
    let v_num = m1[3] / m1[5] + m0[3] / m0[5];
    let v_den = m1[4] / m1[5] + m0[4] / m0[5];
    let c_nd = m1[2] / m1[5] + m0[2] / m0[5];
    let var = (v_num - 2.0 * point * c_nd + point * point * v_den) / (pi01 * pi01);
    let mut rep = EstimateReport::new("cace_iv", "E[Y(1) - Y(0) | S(0)=0, S(1)=1]", point, itt.n_used)
        .with_se(var.max(0.0).sqrt(), DEFAULT_LEVEL)
        .assume(&[
            tags::SUTVA,
            tags::RANDOMIZATION,
            tags::EXCLUSION,
            tags::MONOTONICITY,
            tags::POSITIVITY,
        ])
        .extra("itt", itt.point)
        .extra("p1", p1)
        .extra("p0", p0)
        .extra("pi01", pi01)
        .extra("floor", floor);
    if pi01 < 5.0 * floor {
        rep.warn(format!("weak complier share {pi01:.4}; the ratio estimator is unstable"));
    }
    for w in itt.warnings {
        rep.warn(w);
    }
    Ok(rep)
}
