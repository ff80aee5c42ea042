use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Arm;
use crate::error::{Error, Result};

/// What `S = 0` denotes for the stratification variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMeans {
    /// `S = 1` is an intercurrent event (relapse, death, non-adherence).
    #[default]
    NoEventOrCompliant,
    /// `S` records the treatment actually taken: `1` experimental, `0` control.
    TakingExperimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// `S(1) >= S(0)`: the `S10` cell is empty.
    S1GeS0,
    /// `S(1) <= S(0)`: the `S01` cell is empty.
    S1LeS0,
    #[default]
    None,
}

/// Naming scheme for the four strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Vocabulary {
    /// Immune / Harmed / Benefiters / Doomed.
    #[default]
    Event,
    /// Always-compliers / Control-only / Experimental-only / Never-compliers.
    Adherence,
    /// Always-survivors / Control-only / Experimental-only / Doomed.
    Survival,
    /// Never-takers / Compliers / Defiers / Always-takers.
    TreatmentTaken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EventCoding {
    pub zero_means: ZeroMeans,
    pub monotonicity: Monotonicity,
    #[serde(default)]
    pub vocabulary: Vocabulary,
}

impl EventCoding {
    pub fn new(zero_means: ZeroMeans, monotonicity: Monotonicity) -> Self {
        let vocabulary = match zero_means {
            ZeroMeans::TakingExperimental => Vocabulary::TreatmentTaken,
            ZeroMeans::NoEventOrCompliant => Vocabulary::Event,
        };
        EventCoding {
            zero_means,
            monotonicity,
            vocabulary,
        }
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    /// Actual-treatment coding with no defiers (`S(1) >= S(0)`).
    pub fn iv() -> Self {
        EventCoding::new(ZeroMeans::TakingExperimental, Monotonicity::S1GeS0)
    }

    /// Harmful event coding with no Harmed stratum (`S(1) <= S(0)`).
    pub fn event_no_harmed() -> Self {
        EventCoding::new(ZeroMeans::NoEventOrCompliant, Monotonicity::S1LeS0)
    }

    /// Adherence coding (`S = 1` non-adherence) with the given monotonicity.
    pub fn adherence(monotonicity: Monotonicity) -> Self {
        EventCoding::new(ZeroMeans::NoEventOrCompliant, monotonicity).with_vocabulary(Vocabulary::Adherence)
    }

    /// Survival coding (`S = 1` death) with `S(1) <= S(0)`.
    pub fn survival() -> Self {
        EventCoding::new(ZeroMeans::NoEventOrCompliant, Monotonicity::S1LeS0).with_vocabulary(Vocabulary::Survival)
    }

    /// The stratum ruled out by the declared monotonicity, if any.
    pub fn forbidden(&self) -> Option<StrataLabel> {
        match self.monotonicity {
            Monotonicity::S1GeS0 => Some(StrataLabel::S10),
            Monotonicity::S1LeS0 => Some(StrataLabel::S01),
            Monotonicity::None => None,
        }
    }

    /// Strata compatible with an observed `(T, S)` cell.
    pub fn compatible(&self, arm: Arm, s: u8) -> Vec<StrataLabel> {
        let forbidden = self.forbidden();
        StrataLabel::ALL
            .into_iter()
            .filter(|u| u.s_at(arm) == s && Some(*u) != forbidden)
            .collect()
    }

    pub fn require_monotone(&self, what: &str) -> Result<()> {
        if self.monotonicity == Monotonicity::None {
            return Err(Error::PreconditionFailed(format!(
                "{what} requires a declared monotonicity direction"
            )));
        }
        Ok(())
    }
}

/// Principal stratum `S_ij = (S(0) = i, S(1) = j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrataLabel {
    S00,
    S01,
    S10,
    S11,
}

impl StrataLabel {
    pub const ALL: [StrataLabel; 4] = [
        StrataLabel::S00,
        StrataLabel::S01,
        StrataLabel::S10,
        StrataLabel::S11,
    ];

    pub fn from_pair(s0: u8, s1: u8) -> StrataLabel {
        match (s0, s1) {
            (0, 0) => StrataLabel::S00,
            (0, _) => StrataLabel::S01,
            (_, 0) => StrataLabel::S10,
            _ => StrataLabel::S11,
        }
    }

    pub fn s0(self) -> u8 {
        matches!(self, StrataLabel::S10 | StrataLabel::S11) as u8
    }

    pub fn s1(self) -> u8 {
        matches!(self, StrataLabel::S01 | StrataLabel::S11) as u8
    }

    pub fn s_at(self, arm: Arm) -> u8 {
        match arm {
            Arm::Control => self.s0(),
            Arm::Treated => self.s1(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            StrataLabel::S00 => "S00",
            StrataLabel::S01 => "S01",
            StrataLabel::S10 => "S10",
            StrataLabel::S11 => "S11",
        }
    }

    pub fn display_name(self, coding: &EventCoding) -> &'static str {
        use StrataLabel::*;
        match (coding.vocabulary, self) {
            (Vocabulary::Event, S00) => "Immune",
            (Vocabulary::Event, S01) => "Harmed",
            (Vocabulary::Event, S10) => "Benefiters",
            (Vocabulary::Event, S11) => "Doomed",
            (Vocabulary::Adherence, S00) => "Always-compliers",
            (Vocabulary::Adherence, S01) => "Control-only-compliers",
            (Vocabulary::Adherence, S10) => "Experimental-only-compliers",
            (Vocabulary::Adherence, S11) => "Never-compliers",
            (Vocabulary::Survival, S00) => "Always-survivors",
            (Vocabulary::Survival, S01) => "Control-only-survivors",
            (Vocabulary::Survival, S10) => "Experimental-only-survivors",
            (Vocabulary::Survival, S11) => "Doomed",
            (Vocabulary::TreatmentTaken, S00) => "Never-takers",
            (Vocabulary::TreatmentTaken, S01) => "Compliers",
            (Vocabulary::TreatmentTaken, S10) => "Defiers",
            (Vocabulary::TreatmentTaken, S11) => "Always-takers",
        }
    }

    /// Parses `S00`-style codes or any display name from any vocabulary.
    pub fn parse(name: &str) -> Option<StrataLabel> {
        let norm = normalize(name);
        for u in StrataLabel::ALL {
            if normalize(u.code()) == norm {
                return Some(u);
            }
        }
        for vocab in [
            Vocabulary::Event,
            Vocabulary::Adherence,
            Vocabulary::Survival,
            Vocabulary::TreatmentTaken,
        ] {
            let coding = EventCoding::default().with_vocabulary(vocab);
            for u in StrataLabel::ALL {
                if normalize(u.display_name(&coding)) == norm {
                    return Some(u);
                }
            }
        }
        None
    }
}

fn normalize(s: &str) -> String {
    let mut out: String = s
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '*')
        .map(|c| c.to_ascii_lowercase())
        .collect();
    if out.ends_with('s') && out.len() > 3 {
        out.pop();
    }
    out
}

impl fmt::Display for StrataLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A union of principal strata, e.g. `{S(1) = 0} = S00 ∪ S10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StratumSet(u8);

impl StratumSet {
    pub fn single(u: StrataLabel) -> Self {
        StratumSet(1 << u.index())
    }

    pub fn of(labels: &[StrataLabel]) -> Self {
        StratumSet(labels.iter().fold(0, |m, u| m | (1 << u.index())))
    }

    pub fn all() -> Self {
        StratumSet(0b1111)
    }

    /// `{S(1) = 0}`, written `S*0` for adherence strata.
    pub fn s1_zero() -> Self {
        StratumSet::of(&[StrataLabel::S00, StrataLabel::S10])
    }

    /// `{S(0) = 0}`.
    pub fn s0_zero() -> Self {
        StratumSet::of(&[StrataLabel::S00, StrataLabel::S01])
    }

    pub fn contains(self, u: StrataLabel) -> bool {
        self.0 & (1 << u.index()) != 0
    }

    pub fn labels(self) -> Vec<StrataLabel> {
        StrataLabel::ALL.into_iter().filter(|u| self.contains(*u)).collect()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn describe(self) -> String {
        if self == StratumSet::all() {
            return "all".into();
        }
        if self == StratumSet::s1_zero() {
            return "S*0".into();
        }
        if self == StratumSet::s0_zero() {
            return "S0*".into();
        }
        self.labels()
            .iter()
            .map(|u| u.code())
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl From<StrataLabel> for StratumSet {
    fn from(u: StrataLabel) -> Self {
        StratumSet::single(u)
    }
}

impl FromStr for StratumSet {
    type Err = Error;

    /// Accepts `all`, `S*0`/`s1=0`, `S0*`/`s0=0`, stratum codes or display
    /// names, and `+`-joined unions of those.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "all" | "ate" => return Ok(StratumSet::all()),
            "s*0" | "s_star0" | "s1=0" | "sstar0" => return Ok(StratumSet::s1_zero()),
            "s0*" | "s0=0" => return Ok(StratumSet::s0_zero()),
            _ => {}
        }
        let mut mask = 0u8;
        for part in t.split('+') {
            let u = StrataLabel::parse(part)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown stratum `{part}`")))?;
            mask |= 1 << u.index();
        }
        Ok(StratumSet(mask))
    }
}
