//! Trial data model: subject records, event coding conventions and the
//! four-cell strata taxonomy.

mod csv_io;
mod strata;
mod summary;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to, ColumnMapping};
pub use strata::{EventCoding, Monotonicity, StrataLabel, StratumSet, Vocabulary, ZeroMeans};
pub use summary::{summarize_arms, ArmStats, ArmSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm. `Control` is `T = 0`, `Treated` is `T = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_bit(b: u8) -> Arm {
        if b == 0 {
            Arm::Control
        } else {
            Arm::Treated
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.bit() as usize
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeDirection {
    #[default]
    LowerIsBetter,
    HigherIsBetter,
}

/// One subject's observed data.
///
/// `stage_events` and `intermediate` are empty when the trial has no staged
/// structure. A missing stage event or intermediate block is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub trt: u8,
    pub event: u8,
    pub stage_events: Vec<Option<u8>>,
    pub outcome: Option<f64>,
    pub baseline: Vec<f64>,
    pub intermediate: Vec<Option<Vec<f64>>>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, trt: u8, event: u8, outcome: Option<f64>, baseline: Vec<f64>) -> Self {
        SubjectRecord {
            id: id.into(),
            trt,
            event,
            stage_events: Vec::new(),
            outcome,
            baseline,
            intermediate: Vec::new(),
        }
    }

    pub fn arm(&self) -> Arm {
        Arm::from_bit(self.trt)
    }

    pub fn in_cell(&self, arm: Arm, event: u8) -> bool {
        self.trt == arm.bit() && self.event == event
    }

    /// Overall event implied by the non-missing stage events.
    pub fn stage_union(&self) -> Option<u8> {
        if self.stage_events.is_empty() {
            return None;
        }
        let any = self.stage_events.iter().flatten().any(|&s| s == 1);
        Some(any as u8)
    }

    /// Intermediate covariates of blocks `0..upto` concatenated, if all present.
    pub fn intermediate_prefix(&self, upto: usize) -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for block in self.intermediate.iter().take(upto) {
            out.extend_from_slice(block.as_ref()?);
        }
        Some(out)
    }

    fn validate(&self, row: usize) -> Result<()> {
        if self.trt > 1 {
            return Err(Error::NonBinaryTreatment {
                row,
                value: self.trt.to_string(),
            });
        }
        if self.event > 1 {
            return Err(Error::MalformedRow {
                row,
                column: "event".into(),
                reason: format!("event value {} is not 0/1", self.event),
            });
        }
        if self.stage_events.is_empty() {
            return Ok(());
        }
        let mut first_event: Option<usize> = None;
        for (k, s) in self.stage_events.iter().enumerate() {
            match (s, first_event) {
                (Some(v), _) if *v > 1 => {
                    return Err(Error::MalformedRow {
                        row,
                        column: format!("event_{}", k + 1),
                        reason: format!("stage event {v} is not 0/1"),
                    })
                }
                (Some(_), Some(j)) => {
                    return Err(Error::InconsistentStageEvents {
                        row,
                        reason: format!(
                            "stage {} observed after an event at stage {}",
                            k + 1,
                            j + 1
                        ),
                    })
                }
                (Some(1), None) => first_event = Some(k),
                _ => {}
            }
        }
        let union = self.stage_union().unwrap_or(0);
        if union != self.event {
            return Err(Error::InconsistentStageEvents {
                row,
                reason: format!(
                    "union of stage events is {union} but overall event is {}",
                    self.event
                ),
            });
        }
        if let Some(j) = first_event {
            // block k (0-based) is measured at the end of stage k
            for (k, block) in self.intermediate.iter().enumerate() {
                if k >= j && block.is_some() {
                    return Err(Error::InconsistentStageEvents {
                        row,
                        reason: format!(
                            "intermediate block {} present after an event at stage {}",
                            k + 1,
                            j + 1
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// An immutable, validated table of subject records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    records: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
    intermediate_names: Vec<Vec<String>>,
    coding: EventCoding,
    outcome_direction: OutcomeDirection,
}

impl TrialDataset {
    pub fn new(
        records: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
        intermediate_names: Vec<Vec<String>>,
        coding: EventCoding,
        outcome_direction: OutcomeDirection,
    ) -> Result<Self> {
        let p = covariate_names.len();
        let stages = records.first().map(|r| r.stage_events.len()).unwrap_or(0);
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.baseline.len() != p {
                return Err(Error::MalformedRow {
                    row,
                    column: "x_*".into(),
                    reason: format!("expected {p} baseline covariates, found {}", r.baseline.len()),
                });
            }
            if r.stage_events.len() != stages {
                return Err(Error::MalformedRow {
                    row,
                    column: "event_*".into(),
                    reason: "stage structure differs between records".into(),
                });
            }
            if r.intermediate.len() != intermediate_names.len() {
                return Err(Error::MalformedRow {
                    row,
                    column: "z*".into(),
                    reason: "intermediate block count differs from header".into(),
                });
            }
            for (k, block) in r.intermediate.iter().enumerate() {
                if let Some(b) = block {
                    if b.len() != intermediate_names[k].len() {
                        return Err(Error::MalformedRow {
                            row,
                            column: format!("z{}_*", k + 1),
                            reason: "intermediate block has the wrong length".into(),
                        });
                    }
                }
            }
            r.validate(row)?;
        }
        let ds = TrialDataset {
            records,
            covariate_names,
            intermediate_names,
            coding,
            outcome_direction,
        };
        for arm in Arm::BOTH {
            if ds.arm_count(arm) == 0 {
                return Err(Error::EmptyArm { arm: arm.bit() });
            }
        }
        Ok(ds)
    }

    /// Builds a dataset without the at-least-one-per-arm requirement; used for
    /// resamples that are re-validated by the estimator anyway.
    pub(crate) fn from_parts_unchecked(
        records: Vec<SubjectRecord>,
        template: &TrialDataset,
    ) -> TrialDataset {
        TrialDataset {
            records,
            covariate_names: template.covariate_names.clone(),
            intermediate_names: template.intermediate_names.clone(),
            coding: template.coding,
            outcome_direction: template.outcome_direction,
        }
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn intermediate_names(&self) -> &[Vec<String>] {
        &self.intermediate_names
    }

    pub fn coding(&self) -> EventCoding {
        self.coding
    }

    pub fn outcome_direction(&self) -> OutcomeDirection {
        self.outcome_direction
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_stages(&self) -> usize {
        self.records.first().map(|r| r.stage_events.len()).unwrap_or(0)
    }

    pub fn n_blocks(&self) -> usize {
        self.intermediate_names.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.intermediate_names.iter().map(|b| b.len()).collect()
    }

    pub fn with_coding(&self, coding: EventCoding) -> TrialDataset {
        let mut ds = self.clone();
        ds.coding = coding;
        ds
    }

    pub fn with_direction(&self, dir: OutcomeDirection) -> TrialDataset {
        let mut ds = self.clone();
        ds.outcome_direction = dir;
        ds
    }

    pub fn arm_count(&self, arm: Arm) -> usize {
        self.records.iter().filter(|r| r.arm() == arm).count()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        let stripped = name.strip_prefix("x_").unwrap_or(name);
        self.covariate_names.iter().position(|c| c == stripped)
    }

    /// Records selected by `indices`, in that order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> TrialDataset {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        TrialDataset::from_parts_unchecked(records, self)
    }

    /// Observed outcomes in the cell `(arm, event)`, skipping missing values.
    pub fn cell_outcomes(&self, arm: Arm, event: u8) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.in_cell(arm, event))
            .filter_map(|r| r.outcome)
            .collect()
    }

    /// True when every observed outcome is 0 or 1.
    pub fn outcome_is_binary(&self) -> bool {
        self.records
            .iter()
            .filter_map(|r| r.outcome)
            .all(|y| y == 0.0 || y == 1.0)
    }
}
