use serde::{Deserialize, Serialize};

use super::{Arm, TrialDataset};
use crate::error::{Error, Result};

/// Per-arm descriptive statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub n: usize,
    pub n_event_free: usize,
    /// Proportion with `S = 0`.
    pub p_event_free: f64,
    /// Mean outcome among `S = 0` subjects with non-missing `Y`.
    pub mean_outcome_event_free: Option<f64>,
    pub n_outcome_used: usize,
    /// `S = 0` subjects whose outcome is missing (dropped, flagged).
    pub n_outcome_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub control: ArmStats,
    pub treated: ArmStats,
}

impl ArmSummary {
    pub fn arm(&self, arm: Arm) -> &ArmStats {
        match arm {
            Arm::Control => &self.control,
            Arm::Treated => &self.treated,
        }
    }
}

fn arm_stats(ds: &TrialDataset, arm: Arm) -> Result<ArmStats> {
    let mut n = 0;
    let mut n0 = 0;
    let mut sum = 0.0;
    let mut used = 0;
    let mut missing = 0;
    for r in ds.records().iter().filter(|r| r.arm() == arm) {
        n += 1;
        if r.event == 0 {
            n0 += 1;
            match r.outcome {
                Some(y) => {
                    sum += y;
                    used += 1;
                }
                None => missing += 1,
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyArm { arm: arm.bit() });
    }
    Ok(ArmStats {
        n,
        n_event_free: n0,
        p_event_free: n0 as f64 / n as f64,
        mean_outcome_event_free: (used > 0).then(|| sum / used as f64),
        n_outcome_used: used,
        n_outcome_missing: missing,
    })
}

pub fn summarize_arms(ds: &TrialDataset) -> Result<ArmSummary> {
    Ok(ArmSummary {
        control: arm_stats(ds, Arm::Control)?,
        treated: arm_stats(ds, Arm::Treated)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventCoding, OutcomeDirection, SubjectRecord};

    fn arm_block(trt: u8, n: usize, event_free: usize) -> Vec<SubjectRecord> {
        (0..n)
            .map(|i| {
                let s = (i >= event_free) as u8;
                SubjectRecord::new(format!("{trt}-{i}"), trt, s, (s == 0).then_some(0.0), vec![])
            })
            .collect()
    }

    #[test]
    fn diabetes_completion_rates() {
        let mut recs = arm_block(1, 663, 509);
        recs.extend(arm_block(0, 449, 368));
        let ds = TrialDataset::new(recs, vec![], vec![], EventCoding::default(), OutcomeDirection::LowerIsBetter)
            .unwrap();
        let s = summarize_arms(&ds).unwrap();
        assert!((s.treated.p_event_free - 0.7677).abs() < 5e-5);
        assert!((s.control.p_event_free - 0.8196).abs() < 5e-5);
    }

    #[test]
    fn all_event_free() {
        let mut recs = arm_block(1, 5, 5);
        recs.extend(arm_block(0, 4, 4));
        let ds = TrialDataset::new(recs, vec![], vec![], EventCoding::default(), OutcomeDirection::LowerIsBetter)
            .unwrap();
        let s = summarize_arms(&ds).unwrap();
        assert_eq!(s.treated.p_event_free, 1.0);
        assert_eq!(s.control.p_event_free, 1.0);
    }
}
