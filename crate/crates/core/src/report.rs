//! Result containers shared by all estimators and their serialized forms.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Assumption tags attached to reports.
pub mod tags {
    pub const SUTVA: &str = "SUTVA";
    pub const RANDOMIZATION: &str = "randomization";
    pub const EXCLUSION: &str = "exclusion_restriction";
    pub const MONOTONICITY: &str = "monotonicity";
    pub const POSITIVITY: &str = "positivity";
    pub const PI_S0_Y1: &str = "principal_ignorability:S(0)_indep_Y(1)|X";
    pub const STRONG_PI: &str = "principal_ignorability:strong";
    pub const CROSS_WORLD_S: &str = "cross_world:S(t)_indep_S(1-t)|X";
    pub const SENSITIVITY: &str = "sensitivity_parameter";
    pub const STOCHASTIC_DOMINANCE: &str = "stochastic_dominance";
    pub const ALPHA_NONPOSITIVE: &str = "alpha<=0";
    pub const A4: &str = "A4:treatment_ignorability";
    pub const A5: &str = "A5:adherence_ignorability";
    pub const A6: &str = "A6:Y(t)_indep_Z(1-t)|X,Z(t)";
    pub const A7: &str = "A7:Z(0)_indep_Z(1)|X";
    pub const A4_STAR: &str = "A4*:no_unmeasured_confounders_outcomes";
    pub const A5_STAR: &str = "A5*:no_unmeasured_confounders_strata";
    pub const MCAR_OUTCOME: &str = "missing_outcomes_MCAR";
    pub const MAR: &str = "MAR";
    pub const NON_CAUSAL: &str = "descriptive_non_causal";
}

/// Convention string for contrasts reported treated minus control.
pub const TREATED_MINUS_CONTROL: &str = "treated_minus_control";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub estimand: String,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub level: Option<f64>,
    pub n_used: usize,
    pub assumptions: Vec<String>,
    pub sensitivity_params: BTreeMap<String, f64>,
    pub extras: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub convention: String,
}

impl EstimateReport {
    pub fn new(method: &str, estimand: &str, point: f64, n_used: usize) -> Self {
        EstimateReport {
            method: method.into(),
            estimand: estimand.into(),
            point,
            se: None,
            ci: None,
            level: None,
            n_used,
            assumptions: Vec::new(),
            sensitivity_params: BTreeMap::new(),
            extras: BTreeMap::new(),
            warnings: Vec::new(),
            convention: TREATED_MINUS_CONTROL.into(),
        }
    }

    pub fn assume(mut self, tags: &[&str]) -> Self {
        for t in tags {
            if !self.assumptions.iter().any(|a| a == t) {
                self.assumptions.push(t.to_string());
            }
        }
        self
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.sensitivity_params.insert(name.into(), value);
        self
    }

    pub fn extra(mut self, name: &str, value: f64) -> Self {
        self.extras.insert(name.into(), value);
        self
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let m = msg.into();
        if !self.warnings.contains(&m) {
            self.warnings.push(m);
        }
    }

    /// Attaches a standard error and the matching normal interval.
    pub fn with_se(mut self, se: f64, level: f64) -> Self {
        let (lo, hi) = crate::numerics::stats::wald_ci(self.point, se, level);
        self.se = Some(se);
        self.ci = Some([lo, hi]);
        self.level = Some(level);
        self
    }

    pub fn with_ci(mut self, lo: f64, hi: f64, level: f64) -> Self {
        self.ci = Some([lo, hi]);
        self.level = Some(level);
        self
    }

    /// Bootstrap SE (replicate sd) and percentile interval.
    pub fn with_bootstrap(mut self, b: &crate::numerics::BootstrapResult) -> Self {
        self.se = Some(b.se);
        self.ci = Some([b.ci_low, b.ci_high]);
        self.level = Some(b.level);
        self.extras.insert("bootstrap_replicates".into(), b.replicates.len() as f64);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Estimates of a statistic over a sensitivity-parameter grid. Failed grid
/// points carry `None` and an error name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub param_name: String,
    pub grid: Vec<f64>,
    pub estimates: Vec<Option<f64>>,
    pub ci_low: Option<Vec<Option<f64>>>,
    pub ci_high: Option<Vec<Option<f64>>>,
    pub alpha_solutions: Option<Vec<Option<f64>>>,
    pub failures: Vec<Option<String>>,
    pub level: Option<f64>,
    /// Odds multiplier per unit drop in outcome at each grid value.
    #[serde(default)]
    pub odds_multipliers: Option<Vec<f64>>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SensitivityCurve {
    /// CSV with columns `<param>,estimate,ci_low,ci_high,alpha`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([self.param_name.as_str(), "estimate", "ci_low", "ci_high", "alpha"])?;
        for i in 0..self.grid.len() {
            let lo = self.ci_low.as_ref().and_then(|v| v[i]);
            let hi = self.ci_high.as_ref().and_then(|v| v[i]);
            let a = self.alpha_solutions.as_ref().and_then(|v| v[i]);
            wtr.write_record([
                self.grid[i].to_string(),
                cell(self.estimates[i]),
                cell(lo),
                cell(hi),
                cell(a),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub trim_fraction: f64,
    pub assumptions: Vec<String>,
    pub n_used: usize,
    pub p0: f64,
    pub p1: f64,
}
