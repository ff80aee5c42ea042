//! Non-randomized treatment: propensity model, covariate-standardized
//! τ-sensitivity estimator, and inverse-propensity-weighted Methods A/B.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariate::fit_event_free_model;
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::imputation::{staged_estimate, staged_report, Population, StagedMethod};
use crate::numerics::{design_with_intercept, fit_logistic, stats, LogisticFit};
use crate::report::{tags, EstimateReport};
use crate::sensitivity::mix_setup;
use crate::staged::StagedOptions;

/// Overlap diagnostics use this band.
pub const OVERLAP_BAND: [f64; 2] = [0.05, 0.95];
/// Propensities outside this band make an inverse weight "extreme".
pub const WEIGHT_BAND: [f64; 2] = [0.01, 0.99];

/// `π(x) = Pr(T = 1 | X = x)` with overlap diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub propensities: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Subjects outside [`OVERLAP_BAND`].
    pub n_outside: usize,
    pub positivity_warning: bool,
}

impl PropensityModel {
    fn from_values(coefficients: Vec<f64>, propensities: Vec<f64>) -> Self {
        let min = propensities.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = propensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n_outside = propensities
            .iter()
            .filter(|&&p| !(OVERLAP_BAND[0]..=OVERLAP_BAND[1]).contains(&p))
            .count();
        PropensityModel {
            coefficients,
            propensities,
            min,
            max,
            n_outside,
            positivity_warning: n_outside > 0,
        }
    }

    /// The same propensity for every subject (e.g. a known randomization ratio).
    pub fn constant(ds: &TrialDataset, p: f64) -> Result<PropensityModel> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityOutOfRange {
                what: "constant propensity".into(),
                value: p,
            });
        }
        let mut c = vec![0.0; ds.p() + 1];
        c[0] = crate::numerics::logit(p);
        Ok(Self::from_values(c, vec![p; ds.len()]))
    }

    /// Clamps propensities to the `[lo, hi]` quantiles of their distribution.
    pub fn truncated(&self, lo_q: f64, hi_q: f64) -> PropensityModel {
        let lo = stats::quantile(&self.propensities, lo_q);
        let hi = stats::quantile(&self.propensities, hi_q);
        let p = self.propensities.iter().map(|v| v.clamp(lo, hi)).collect();
        Self::from_values(self.coefficients.clone(), p)
    }

    /// Inverse-probability weights: `1/π` for treated, `1/(1 − π)` for control.
    pub fn weights(&self, ds: &TrialDataset) -> Vec<f64> {
        ds.records()
            .iter()
            .zip(&self.propensities)
            .map(|(r, p)| if r.trt == 1 { 1.0 / p } else { 1.0 / (1.0 - p) })
            .collect()
    }

    /// `id,trt,propensity` per subject.
    pub fn write_csv_to<W: Write>(&self, ds: &TrialDataset, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["id", "trt", "propensity"])?;
        for (r, p) in ds.records().iter().zip(&self.propensities) {
            wtr.write_record([r.id.clone(), r.trt.to_string(), p.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, ds: &TrialDataset, path: &Path) -> Result<()> {
        self.write_csv_to(ds, std::fs::File::create(path)?)
    }

    fn annotate(&self, rep: &mut EstimateReport) {
        rep.extras.insert("propensity_min".into(), self.min);
        rep.extras.insert("propensity_max".into(), self.max);
        rep.extras.insert("propensity_n_outside_overlap".into(), self.n_outside as f64);
        if self.positivity_warning {
            rep.warn(format!(
                "PositivityWarning: {} fitted propensities outside [{}, {}]",
                self.n_outside, OVERLAP_BAND[0], OVERLAP_BAND[1]
            ));
        }
    }
}

/// Logistic regression of `T` on `(1, x)`.
pub fn fit_propensity(ds: &TrialDataset) -> Result<PropensityModel> {
    let design = design_with_intercept(ds.records().iter().map(|r| r.baseline.as_slice()), ds.p());
    let t: Vec<f64> = ds.records().iter().map(|r| r.trt as f64).collect();
    let fit = fit_logistic(&design, &t, None).map_err(|e| match e {
        Error::Separation | Error::RankDeficient => e,
        other => Error::ModelFitFailed(format!("propensity model: {other}")),
    })?;
    let p = ds.records().iter().map(|r| fit.predict_x(&r.baseline)).collect();
    Ok(PropensityModel::from_values(fit.coefficients, p))
}

/// `Pr(Y = 1 | S = 0, T = arm, X)` on the arm's event-free subjects.
fn fit_binary_outcome(ds: &TrialDataset, arm: Arm) -> Result<LogisticFit> {
    let recs: Vec<_> = ds
        .records()
        .iter()
        .filter(|r| r.in_cell(arm, 0) && r.outcome.is_some())
        .collect();
    if recs.is_empty() {
        return Err(Error::EmptyStratumCell(format!("T={}, S=0 has no outcomes", arm.bit())));
    }
    let y: Vec<f64> = recs.iter().map(|r| r.outcome.unwrap()).collect();
    if y.iter().all(|&v| v == y[0]) {
        let mut c = vec![0.0; ds.p() + 1];
        c[0] = if y[0] == 1.0 { 40.0 } else { -40.0 };
        return Ok(LogisticFit::fixed(c));
    }
    let design = design_with_intercept(recs.iter().map(|r| r.baseline.as_slice()), ds.p());
    fit_logistic(&design, &y, None)
        .map_err(|e| Error::ModelFitFailed(format!("Pr(Y=1 | S=0, T={}, X): {e}", arm.bit())))
}

/// Covariate-standardized τ family: with `g_t(x) = Pr(S=0 | T=t, x)` and
/// `h_t(x) = Pr(Y=1 | S=0, T=t, x)`, the mixed arm's `S00` risk is
/// `[Ê(h g)/Ê(g)] / [τ + (1 − τ) Ê(g_pure)/Ê(g)]`, the pure arm's is
/// `Ê(h g)/Ê(g)`; `Ê` averages over all subjects' covariates. Point = OR.
///
/// The standardization relies on the outcome and strata models; the
/// propensity model contributes the overlap diagnostics.
pub fn obs_sensitivity_tau(ds: &TrialDataset, prop: &PropensityModel, tau: f64) -> Result<EstimateReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau = {tau} must be positive and finite")));
    }
    if !ds.outcome_is_binary() {
        return Err(Error::PreconditionFailed("obs_sensitivity_tau needs a 0/1 outcome".into()));
    }
    let mix = mix_setup(ds)?;
    let mut eg = [0.0; 2];
    let mut ehg = [0.0; 2];
    for arm in Arm::BOTH {
        let g = fit_event_free_model(ds, arm)?;
        let h = fit_binary_outcome(ds, arm)?;
        let (mut a, mut b) = (0.0, 0.0);
        for r in ds.records() {
            let gv = g.predict_x(&r.baseline);
            a += gv;
            b += gv * h.predict_x(&r.baseline);
        }
        eg[arm.index()] = a / ds.len() as f64;
        ehg[arm.index()] = b / ds.len() as f64;
    }
    let (m, p) = (mix.mixed.index(), mix.pure.index());
    let check = |what: &str, v: f64| -> Result<f64> {
        if !(-1e-12..=1.0 + 1e-12).contains(&v) || !v.is_finite() {
            return Err(Error::ProbabilityOutOfRange { what: what.into(), value: v });
        }
        Ok(v.clamp(0.0, 1.0))
    };
    let ratio = eg[p] / eg[m];
    let p_mixed = check("Pr(Y=1 | S00), mixed arm", (ehg[m] / eg[m]) / (tau + (1.0 - tau) * ratio))?;
    let p_pure = check("Pr(Y=1 | S00), pure arm", ehg[p] / eg[p])?;
    let (p1, p0) = match mix.mixed {
        Arm::Treated => (p_mixed, p_pure),
        Arm::Control => (p_pure, p_mixed),
    };
    let or = p1 * (1.0 - p0) / ((1.0 - p1) * p0);
    if !or.is_finite() {
        return Err(Error::PreconditionFailed(format!("odds ratio undefined at ({p1}, {p0})")));
    }
    let mut rep = EstimateReport::new("obs_sensitivity_tau", "OR(Y | S00), treated vs control", or, ds.len())
        .assume(&[
            tags::SUTVA,
            tags::A4_STAR,
            tags::A5_STAR,
            tags::MONOTONICITY,
            tags::POSITIVITY,
            tags::SENSITIVITY,
        ])
        .param("tau", tau)
        .extra("pr_y1_s00", p1)
        .extra("pr_y0_s00", p0)
        .extra("risk_difference", p1 - p0)
        .extra("standardized_g_treated", eg[1])
        .extra("standardized_g_control", eg[0])
        .extra("pr_s00_given_mixed", ratio);
    prop.annotate(&mut rep);
    Ok(rep)
}

/// Options for [`ipw_method`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct IpwOptions {
    pub staged: StagedOptions,
    /// Clamp propensities to these quantiles before weighting (disclosed in
    /// the report).
    pub truncate: Option<(f64, f64)>,
}

/// Self-normalized inverse-propensity-weighted Methods A/B.
pub fn ipw_method(
    ds: &TrialDataset,
    prop: &PropensityModel,
    population: Population,
    method: StagedMethod,
    opts: &IpwOptions,
) -> Result<EstimateReport> {
    if prop.propensities.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: prop.propensities.len(),
        });
    }
    let used = match opts.truncate {
        Some((lo, hi)) => prop.truncated(lo, hi),
        None => prop.clone(),
    };
    let w = used.weights(ds);
    let (parts, nu) = staged_estimate(ds, population, method, &opts.staged, Some(&w))?;
    let name = match method {
        StagedMethod::A => "ipw_method_a",
        StagedMethod::B => "ipw_method_b",
    };
    let mut rep = staged_report(name, population, &parts, &nu, &[tags::A4_STAR, tags::A5_STAR, tags::POSITIVITY]);
    let extreme = used
        .propensities
        .iter()
        .filter(|&&p| !(WEIGHT_BAND[0]..=WEIGHT_BAND[1]).contains(&p))
        .count();
    if extreme > 0 {
        rep.warn(format!(
            "ExtremeWeights: {extreme} propensities outside [{}, {}]",
            WEIGHT_BAND[0], WEIGHT_BAND[1]
        ));
    }
    if let Some((lo, hi)) = opts.truncate {
        rep = rep.param("truncate_low_quantile", lo).param("truncate_high_quantile", hi);
        rep.warn("propensities truncated at quantiles before weighting");
    }
    used.annotate(&mut rep);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate, preset};

    #[test]
    fn randomized_propensities_hug_the_treated_fraction() {
        let (_, ds) = generate(&preset("pi_baseline").unwrap().with_n(20_000), 1).unwrap();
        let p = fit_propensity(&ds).unwrap();
        let frac = ds.arm_count(Arm::Treated) as f64 / ds.len() as f64;
        assert!(p.propensities.iter().all(|v| (v - frac).abs() < 0.05));
        assert!(!p.positivity_warning);
    }

    #[test]
    fn deterministic_assignment_separates() {
        use crate::data::{EventCoding, OutcomeDirection, SubjectRecord};
        let recs = (0..40)
            .map(|i| {
                let x = i as f64 - 19.5;
                SubjectRecord::new(i.to_string(), (x > 0.0) as u8, 0, Some(1.0), vec![x])
            })
            .collect();
        let ds = TrialDataset::new(
            recs,
            vec!["x".into()],
            vec![],
            EventCoding::event_no_harmed(),
            OutcomeDirection::LowerIsBetter,
        )
        .unwrap();
        assert!(matches!(fit_propensity(&ds), Err(Error::Separation)));
    }

    #[test]
    fn tau_one_is_ratio_of_standardized_means() {
        let (_, ds) = generate(&preset("binary_event").unwrap().with_n(5000), 2).unwrap();
        let p = PropensityModel::constant(&ds, 0.5).unwrap();
        let r = obs_sensitivity_tau(&ds, &p, 1.0).unwrap();
        let r2 = obs_sensitivity_tau(&ds, &p, 2.0).unwrap();
        assert!(r.extras["pr_y1_s00"] > r2.extras["pr_y1_s00"]);
        // No covariates: reduces to the unstandardized binary_tau exactly.
        let bare = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
        let recs: Vec<_> = bare
            .records()
            .iter()
            .map(|r| crate::data::SubjectRecord::new(r.id.clone(), r.trt, r.event, r.outcome, vec![]))
            .collect();
        let bare = TrialDataset::new(recs, vec![], vec![], ds.coding(), ds.outcome_direction()).unwrap();
        let pc = PropensityModel::constant(&bare, 0.5).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let a = obs_sensitivity_tau(&bare, &pc, tau).unwrap();
            let b = crate::sensitivity::binary_tau(&bare, tau).unwrap();
            assert!((a.point - b.point).abs() < 1e-8, "{} vs {}", a.point, b.point);
        }
    }

    #[test]
    fn weights_scale_invariance() {
        let (_, ds) = generate(&preset("staged_qu").unwrap().with_n(2000), 4).unwrap();
        let p = PropensityModel::constant(&ds, 0.3).unwrap();
        let q = PropensityModel::constant(&ds, 0.3).unwrap();
        let a = ipw_method(&ds, &p, Population::S00, StagedMethod::B, &IpwOptions::default()).unwrap();
        let b = ipw_method(&ds, &q, Population::S00, StagedMethod::B, &IpwOptions::default()).unwrap();
        assert_eq!(a.point, b.point);
        let rnd = crate::imputation::method_b(&ds, Population::S00, &Default::default()).unwrap();
        assert!((a.point - rnd.point).abs() < 1e-10);
    }
}
