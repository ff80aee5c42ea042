//! Estimators that borrow strength from baseline covariates.
//!
//! * T1 — predicted counterfactual response (optionally through
//!   intermediates, `m_t(x) = E{E(Y | Z, X, T = t) | X = x}`),
//! * T2 — strata-propensity weighting of the treated arm,
//! * T3 / T4 — weighting without monotonicity under `S(0) ⫫ S(1) | X`,
//! * principal scores fitted by EM over the three non-empty strata, and the
//!   score-weighted estimator built on them,
//! * covariate distributions within a stratum.
//!
//! The T-statistics are conventionally written control minus treated; every report
//! here is treated minus control, with the original sign kept in
//! `extras["control_minus_treated"]`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basic::{cell, DEFAULT_LEVEL};
use crate::data::{Arm, StrataLabel, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::numerics::{
    design_with_intercept, fit_logistic, fit_multinomial, fit_ols, log_sum_exp, newton_step, stats, stream, tag,
    weighted_kde, kde_grid, LogisticFit, MultinomialFit, OlsFit,
};
use crate::report::{tags, EstimateReport};
use crate::staged::{fit_outcome_regression, fit_zchain, with_escalation, x1, DEFAULT_DRAWS};

/// Weights outside `[WEIGHT_FLOOR, 1 − WEIGHT_FLOOR]` are flagged.
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;
pub const EM_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModelKind {
    Linear,
    LinearWithIntermediates,
}

/// Linear regression of `Y` on `(1, x)` within one arm.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub arm: Arm,
    pub kind: OutcomeModelKind,
    pub coefficients: Vec<f64>,
    pub rmse: f64,
    pub n: usize,
    fit: OlsFit,
}

impl OutcomeModel {
    /// Prediction at a covariate vector (no intercept entry).
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Fits `E(Y | X, T = arm)` on the arm's subjects with an observed outcome.
pub fn fit_outcome_model(ds: &TrialDataset, arm: Arm) -> Result<OutcomeModel> {
    let recs: Vec<&SubjectRecord> = ds
        .records()
        .iter()
        .filter(|r| r.arm() == arm && r.outcome.is_some())
        .collect();
    if recs.is_empty() {
        return Err(Error::ModelFitFailed(format!("arm {} has no observed outcomes", arm.bit())));
    }
    let design = design_with_intercept(recs.iter().map(|r| r.baseline.as_slice()), ds.p());
    let y: Vec<f64> = recs.iter().map(|r| r.outcome.unwrap()).collect();
    let fit = fit_ols(&design, &y, None)
        .map_err(|e| Error::ModelFitFailed(format!("outcome model, arm {}: {e}", arm.bit())))?;
    Ok(OutcomeModel {
        arm,
        kind: OutcomeModelKind::Linear,
        coefficients: fit.coefficients.iter().cloned().collect(),
        rmse: fit.rmse,
        n: fit.n,
        fit,
    })
}

/// `Pr(S = 0 | X, T = arm)` fitted on all subjects of the arm.
pub fn fit_event_free_model(ds: &TrialDataset, arm: Arm) -> Result<LogisticFit> {
    let recs: Vec<&SubjectRecord> = ds.records().iter().filter(|r| r.arm() == arm).collect();
    let design = design_with_intercept(recs.iter().map(|r| r.baseline.as_slice()), ds.p());
    let resp: Vec<f64> = recs.iter().map(|r| 1.0 - r.event as f64).collect();
    if resp.iter().all(|&v| v == 1.0) || resp.iter().all(|&v| v == 0.0) {
        // No variation: the constant model is the MLE.
        let mut c = vec![0.0; ds.p() + 1];
        c[0] = if resp[0] == 1.0 { 40.0 } else { -40.0 };
        return Ok(LogisticFit::fixed(c));
    }
    fit_logistic(&design, &resp, None)
        .map_err(|e| Error::ModelFitFailed(format!("Pr(S=0 | X, T={}): {e}", arm.bit())))
}

fn flag_weights(report: &mut EstimateReport, what: &str, w: &[f64]) {
    let bad = w
        .iter()
        .filter(|&&v| !(WEIGHT_FLOOR..=1.0 - WEIGHT_FLOOR).contains(&v))
        .count();
    if bad > 0 {
        report.warn(format!(
            "ExtremeWeights: {bad} fitted {what} outside [{WEIGHT_FLOOR:e}, 1-{WEIGHT_FLOOR:e}]"
        ));
    }
}

fn completers(ds: &TrialDataset, arm: Arm) -> Vec<&SubjectRecord> {
    ds.records()
        .iter()
        .filter(|r| r.in_cell(arm, 0) && r.outcome.is_some())
        .collect()
}

/// T1: control completers' outcomes against their predicted outcome under
/// treatment. Estimand `E[Y(1) − Y(0) | S(0) = 0]`.
pub fn predicted_counterfactual_t1(ds: &TrialDataset, use_intermediates: bool) -> Result<EstimateReport> {
    let ctl = completers(ds, Arm::Control);
    if ctl.is_empty() {
        return Err(Error::EmptyStratumCell("T=0,S=0 has no observed outcomes".into()));
    }
    let y: Vec<f64> = ctl.iter().map(|r| r.outcome.unwrap()).collect();
    let (pred, model_var, kind, n_model, rmse, draws) = if use_intermediates {
        if ds.n_blocks() == 0 {
            return Err(Error::StageDataMissing("no intermediate blocks for the double expectation".into()));
        }
        let chain = fit_zchain(ds, Arm::Treated)?;
        let psi = fit_outcome_regression(ds, Arm::Treated)?;
        let sd_y = stats::sd(&y).max(1e-12);
        let seed = tag("t1-intermediates");
        let ((pred, dbar), draws) = with_escalation(DEFAULT_DRAWS, |d| {
            let per: Vec<(f64, f64, Vec<f64>)> = ctl
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = stream(seed, &[i as u64]);
                    let xv = x1(r);
                    let mut row = xv.clone();
                    let (mut s, mut s2) = (0.0, 0.0);
                    let mut dsum = vec![0.0; psi.coefficients.len()];
                    for _ in 0..d {
                        let z = chain.sample(&xv, &mut rng);
                        row.truncate(xv.len());
                        row.extend_from_slice(&z);
                        let v = psi.predict(&row);
                        s += v;
                        s2 += v * v;
                        for (a, b) in dsum.iter_mut().zip(&row) {
                            *a += b;
                        }
                    }
                    let m = s / d as f64;
                    let var = (s2 / d as f64 - m * m).max(0.0);
                    (m, var, dsum.into_iter().map(|v| v / d as f64).collect())
                })
                .collect();
            let n = per.len() as f64;
            let mc = (per.iter().map(|p| p.1).sum::<f64>() / d as f64).sqrt() / n;
            let pred: Vec<f64> = per.iter().map(|p| p.0).collect();
            let k = psi.coefficients.len();
            let dbar: Vec<f64> = (0..k).map(|j| per.iter().map(|p| p.2[j]).sum::<f64>() / n).collect();
            let est = stats::mean(&pred);
            Ok(((pred, dbar), mc, est.abs().max(sd_y)))
        })?;
        let dv = nalgebra::DVector::from_vec(dbar);
        let mv = (dv.transpose() * psi.covariance() * &dv)[(0, 0)];
        (pred, mv, OutcomeModelKind::LinearWithIntermediates, psi.n, psi.rmse, draws)
    } else {
        let m = fit_outcome_model(ds, Arm::Treated)?;
        let pred: Vec<f64> = ctl.iter().map(|r| m.predict(&r.baseline)).collect();
        let xbar = nalgebra::DVector::from_fn(ds.p() + 1, |j, _| {
            if j == 0 {
                1.0
            } else {
                ctl.iter().map(|r| r.baseline[j - 1]).sum::<f64>() / ctl.len() as f64
            }
        });
        let mv = (xbar.transpose() * m.fit.covariance() * &xbar)[(0, 0)];
        (pred, mv, m.kind, m.n, m.rmse, 0)
    };
    let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    let t1 = stats::mean(&resid);
    let se = (stats::var(&resid) / resid.len() as f64 + model_var).sqrt();
    let mut rep = EstimateReport::new("predicted_counterfactual_t1", "E[Y(1)-Y(0) | S(0)=0]", -t1, ctl.len() + n_model)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::PI_S0_Y1])
        .extra("control_minus_treated", t1)
        .extra("mean_control_completers", stats::mean(&y))
        .extra("mean_predicted_treated", stats::mean(&pred))
        .extra("n_control_completers", ctl.len() as f64)
        .extra("outcome_model_n", n_model as f64)
        .extra("outcome_model_rmse", rmse)
        .with_se(se, DEFAULT_LEVEL);
    if kind == OutcomeModelKind::LinearWithIntermediates {
        rep = rep.extra("integration_draws", draws as f64);
    }
    Ok(rep)
}

/// Weighted mean of the arm's observed outcomes. When some outcomes are
/// missing (outcome unobserved after an event), observed subjects are
/// inverse-weighted by the fitted event-free probability of their own arm.
fn arm_weighted_mean(
    ds: &TrialDataset,
    arm: Arm,
    weight: impl Fn(&SubjectRecord) -> f64,
    own: &LogisticFit,
    normalize_by_weights: bool,
    rep: &mut EstimateReport,
) -> Result<f64> {
    let recs: Vec<&SubjectRecord> = ds.records().iter().filter(|r| r.arm() == arm).collect();
    let missing = recs.iter().any(|r| r.outcome.is_none());
    if missing {
        rep.warn(format!(
            "arm {} has missing outcomes; observed subjects inverse-weighted by fitted Pr(S=0 | X, T={})",
            arm.bit(),
            arm.bit()
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for r in &recs {
        let w = weight(r);
        den += w;
        if let Some(y) = r.outcome {
            let adj = if missing { own.predict_x(&r.baseline) } else { 1.0 };
            num += w * y / adj;
        }
    }
    if normalize_by_weights {
        if !(den > 0.0) {
            return Err(Error::DegenerateWeights(format!("arm {} weights sum to zero", arm.bit())));
        }
        Ok(num / den)
    } else {
        Ok(num / recs.len() as f64)
    }
}

/// T2: control completers against the treated arm reweighted by
/// `ŵ_0(x) = Pr(S = 0 | X, T = 0)`.
pub fn strata_propensity_weighted_t2(ds: &TrialDataset) -> Result<EstimateReport> {
    let c = cell(ds, Arm::Control, 0)?;
    let w0 = fit_event_free_model(ds, Arm::Control)?;
    let w1 = fit_event_free_model(ds, Arm::Treated)?;
    let p0 = crate::basic::p_event_free(ds, Arm::Control)?;
    if p0 <= 0.0 {
        return Err(Error::EmptyStratumCell("no control subject is event-free".into()));
    }
    let mut rep = EstimateReport::new("strata_propensity_weighted_t2", "E[Y(1)-Y(0) | S(0)=0]", 0.0, ds.len())
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::PI_S0_Y1]);
    let wt: Vec<f64> = ds
        .records()
        .iter()
        .filter(|r| r.arm() == Arm::Treated)
        .map(|r| w0.predict_x(&r.baseline))
        .collect();
    flag_weights(&mut rep, "w0(x)", &wt);
    let treated_term =
        arm_weighted_mean(ds, Arm::Treated, |r| w0.predict_x(&r.baseline), &w1, false, &mut rep)? / p0;
    let t2 = c.mean - treated_term;
    rep.point = -t2;
    Ok(rep
        .extra("control_minus_treated", t2)
        .extra("mean_control_completers", c.mean)
        .extra("weighted_treated_mean", treated_term)
        .extra("p0", p0)
        .extra("w0_min", wt.iter().cloned().fold(f64::INFINITY, f64::min))
        .extra("w0_max", wt.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoMonoVariant {
    T3,
    T4,
}

/// T3 / T4: Always-compliers (`S00`) effect without monotonicity, assuming
/// `S(0) ⫫ S(1) | X` and strong principal ignorability.
pub fn no_mono_weighted(ds: &TrialDataset, variant: NoMonoVariant) -> Result<EstimateReport> {
    let w0 = fit_event_free_model(ds, Arm::Control)?;
    let w1 = fit_event_free_model(ds, Arm::Treated)?;
    let name = match variant {
        NoMonoVariant::T3 => "no_mono_weighted_t3",
        NoMonoVariant::T4 => "no_mono_weighted_t4",
    };
    let mut rep = EstimateReport::new(name, "E[Y(1)-Y(0) | S00]", 0.0, ds.len()).assume(&[
        tags::SUTVA,
        tags::RANDOMIZATION,
        tags::CROSS_WORLD_S,
        tags::STRONG_PI,
    ]);
    let all: Vec<f64> = ds
        .records()
        .iter()
        .flat_map(|r| [w0.predict_x(&r.baseline), w1.predict_x(&r.baseline)])
        .collect();
    flag_weights(&mut rep, "w_t(x)", &all);
    let (trt, ctl) = match variant {
        NoMonoVariant::T3 => {
            let wm = |arm: Arm, m: &LogisticFit| -> Result<f64> {
                let (mut num, mut den) = (0.0, 0.0);
                for r in completers(ds, arm) {
                    let w = m.predict_x(&r.baseline);
                    num += w * r.outcome.unwrap();
                    den += w;
                }
                if !(den > 0.0) {
                    return Err(Error::DegenerateWeights(format!("arm {} completer weights sum to zero", arm.bit())));
                }
                Ok(num / den)
            };
            (wm(Arm::Treated, &w0)?, wm(Arm::Control, &w1)?)
        }
        NoMonoVariant::T4 => {
            let both = |r: &SubjectRecord| w0.predict_x(&r.baseline) * w1.predict_x(&r.baseline);
            (
                arm_weighted_mean(ds, Arm::Treated, both, &w1, true, &mut rep)?,
                arm_weighted_mean(ds, Arm::Control, both, &w0, true, &mut rep)?,
            )
        }
    };
    rep.point = trt - ctl;
    Ok(rep
        .extra("control_minus_treated", ctl - trt)
        .extra("weighted_treated_mean", trt)
        .extra("weighted_control_mean", ctl))
}

/// Principal scores `π_u(x)` from a multinomial logit over the strata that
/// the declared monotonicity leaves non-empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalScoreModel {
    pub strata: Vec<StrataLabel>,
    pub reference: StrataLabel,
    /// Coefficients on `(1, x)`, one row per entry of `strata`.
    pub coefficients: Vec<Vec<f64>>,
    /// Per-subject `π_u(x_i)` indexed by `StrataLabel::index` (forbidden = 0).
    pub probs: Vec<[f64; 4]>,
    pub em_iterations: usize,
    pub converged: bool,
    /// Mean observed-data log-likelihood per subject at the optimum.
    pub log_likelihood: f64,
    pub ll_trace: Vec<f64>,
    /// Final log-likelihood of each start (deterministic start first).
    pub start_log_liks: Vec<f64>,
}

impl PrincipalScoreModel {
    pub fn probs_at(&self, x: &[f64]) -> [f64; 4] {
        let mut row = vec![1.0];
        row.extend_from_slice(x);
        let fit = MultinomialFit {
            coefficients: self.coefficients.clone(),
            reference: self.strata.iter().position(|&u| u == self.reference).unwrap_or(0),
        };
        let p = fit.probs(&row);
        let mut out = [0.0; 4];
        for (u, v) in self.strata.iter().zip(p) {
            out[u.index()] = v;
        }
        out
    }

    /// Posterior stratum membership given each subject's observed cell.
    pub fn responsibilities(&self, ds: &TrialDataset) -> Vec<[f64; 4]> {
        let coding = ds.coding();
        ds.records()
            .iter()
            .zip(&self.probs)
            .map(|(r, p)| {
                let compat = coding.compatible(r.arm(), r.event);
                let tot: f64 = compat.iter().map(|u| p[u.index()]).sum();
                let mut out = [0.0; 4];
                for u in compat {
                    out[u.index()] = if tot > 0.0 { p[u.index()] / tot } else { 0.0 };
                }
                out
            })
            .collect()
    }
}

struct EmRun {
    fit: MultinomialFit,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// E-step: soft labels restricted to compatible strata; returns the mean
/// observed-data log-likelihood.
fn e_step(fit: &MultinomialFit, design: &DMatrix<f64>, masks: &[Vec<bool>]) -> (Vec<Vec<f64>>, f64) {
    const CHUNK: usize = 2048;
    let n = design.nrows();
    let parts: Vec<(Vec<Vec<f64>>, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut soft = Vec::new();
            let mut ll = 0.0;
            let mut row = vec![0.0; design.ncols()];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = design[(i, j)];
                }
                let lp = fit.log_probs(&row);
                let masked: Vec<f64> = lp
                    .iter()
                    .zip(&masks[i])
                    .map(|(l, &m)| if m { *l } else { f64::NEG_INFINITY })
                    .collect();
                let lse = log_sum_exp(&masked);
                ll += lse;
                soft.push(masked.iter().map(|l| (l - lse).exp()).collect());
            }
            (soft, ll)
        })
        .collect();
    let mut soft = Vec::with_capacity(n);
    let mut ll = 0.0;
    for (s, l) in parts {
        soft.extend(s);
        ll += l;
    }
    (soft, ll / n as f64)
}

fn run_em(design: &DMatrix<f64>, masks: &[Vec<bool>], start: MultinomialFit) -> Result<EmRun> {
    let mut fit = start;
    let mut trace: Vec<f64> = Vec::new();
    for it in 0..EM_MAX_ITER {
        let (soft, ll) = e_step(&fit, design, masks);
        if !ll.is_finite() {
            return Err(Error::ModelFitFailed("EM log-likelihood is not finite".into()));
        }
        if let Some(&prev) = trace.last() {
            // EM ascent property: a decrease signals a bug, not data.
            if ll < prev - 1e-10 {
                return Err(Error::ModelFitFailed(format!(
                    "EM log-likelihood decreased at iteration {it}: {prev} -> {ll}"
                )));
            }
            if (ll - prev).abs() < EM_TOLERANCE {
                trace.push(ll);
                return Ok(EmRun {
                    fit,
                    trace,
                    iterations: it,
                    converged: true,
                });
            }
        }
        trace.push(ll);
        let mut q = f64::NEG_INFINITY;
        for _ in 0..3 {
            let q1 = newton_step(&mut fit, design, &soft)?;
            let small = (q1 - q).abs() < 1e-10 * q1.abs().max(1.0);
            q = q1;
            if small {
                break;
            }
        }
    }
    Ok(EmRun {
        fit,
        trace,
        iterations: EM_MAX_ITER,
        converged: false,
    })
}

/// EM fit of principal scores under the declared monotonicity.
///
/// Starts from the two-stage fit (single-stratum cells give their stratum's
/// probability directly; the remaining stratum takes the complement), plus
/// [`EM_RESTARTS`] jittered copies; the start with the best final
/// likelihood is kept. A model that hits the iteration cap is returned with
/// `converged = false`.
pub fn fit_principal_scores_em(ds: &TrialDataset) -> Result<PrincipalScoreModel> {
    let coding = ds.coding();
    coding.require_monotone("principal score EM")?;
    let forbidden = coding.forbidden().expect("monotone coding");
    let strata: Vec<StrataLabel> = StrataLabel::ALL.into_iter().filter(|&u| u != forbidden).collect();
    let reference = strata.len() - 1;
    let p = ds.p();
    let design = design_with_intercept(ds.records().iter().map(|r| r.baseline.as_slice()), p);
    let masks: Vec<Vec<bool>> = ds
        .records()
        .iter()
        .map(|r| {
            let c = coding.compatible(r.arm(), r.event);
            strata.iter().map(|u| c.contains(u)).collect()
        })
        .collect();

    // Two-stage initialization.
    let cell_models = [
        fit_event_free_model(ds, Arm::Control)?,
        fit_event_free_model(ds, Arm::Treated)?,
    ];
    let mut single: Vec<Option<(Arm, u8)>> = vec![None; strata.len()];
    for arm in Arm::BOTH {
        for s in 0..2u8 {
            let c = coding.compatible(arm, s);
            if c.len() == 1 {
                if let Some(k) = strata.iter().position(|u| *u == c[0]) {
                    single[k].get_or_insert((arm, s));
                }
            }
        }
    }
    let init: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = single
                .iter()
                .map(|c| match c {
                    Some((arm, s)) => {
                        let p0 = cell_models[arm.index()].predict_x(&r.baseline);
                        if *s == 0 {
                            p0
                        } else {
                            1.0 - p0
                        }
                    }
                    None => f64::NAN,
                })
                .collect();
            let known: f64 = v.iter().filter(|x| x.is_finite()).sum();
            for x in v.iter_mut() {
                if !x.is_finite() {
                    *x = (1.0 - known).max(0.02);
                }
            }
            let tot: f64 = v.iter().sum();
            v.iter().map(|x| x / tot).collect()
        })
        .collect();
    let start = fit_multinomial(&design, &init, reference, None, 50).map_err(|e| match e {
        Error::RankDeficient => Error::RankDeficient,
        other => Error::ModelFitFailed(format!("principal score initialization: {other}")),
    })?;

    let starts: Vec<MultinomialFit> = (0..=EM_RESTARTS)
        .map(|r| {
            let mut f = start.clone();
            if r > 0 {
                let mut rng = stream(tag("em-restart"), &[r as u64]);
                for (u, row) in f.coefficients.iter_mut().enumerate() {
                    if u != reference {
                        for v in row.iter_mut() {
                            *v += 0.5 * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
            }
            f
        })
        .collect();
    let runs: Vec<Result<EmRun>> = starts.into_par_iter().map(|s| run_em(&design, &masks, s)).collect();
    let mut best: Option<EmRun> = None;
    let mut start_lls = Vec::new();
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(run) => {
                let ll = *run.trace.last().unwrap_or(&f64::NEG_INFINITY);
                start_lls.push(ll);
                let better = best
                    .as_ref()
                    .is_none_or(|b| ll > *b.trace.last().unwrap_or(&f64::NEG_INFINITY) + 1e-12);
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                start_lls.push(f64::NAN);
                first_err.get_or_insert(e);
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(first_err.unwrap_or(Error::ModelFitFailed("EM failed".into()))),
    };
    let probs: Vec<[f64; 4]> = (0..design.nrows())
        .map(|i| {
            let row: Vec<f64> = design.row(i).iter().cloned().collect();
            let pr = best.fit.probs(&row);
            let mut out = [0.0; 4];
            for (u, v) in strata.iter().zip(pr) {
                out[u.index()] = v;
            }
            out
        })
        .collect();
    Ok(PrincipalScoreModel {
        reference: strata[reference],
        strata,
        coefficients: best.fit.coefficients.clone(),
        probs,
        em_iterations: best.iterations,
        converged: best.converged,
        log_likelihood: *best.trace.last().unwrap_or(&f64::NAN),
        ll_trace: best.trace,
        start_log_liks: start_lls,
    })
}

/// Layout of the score-weighted estimator for the declared coding: the
/// mixed arm, the stratum mixed with `S00` there, and the pure arm.
fn score_layout(ds: &TrialDataset) -> Result<(Arm, StrataLabel)> {
    match ds.coding().forbidden() {
        Some(StrataLabel::S01) => Ok((Arm::Treated, StrataLabel::S10)),
        Some(StrataLabel::S10) => Ok((Arm::Control, StrataLabel::S01)),
        _ => Err(Error::PreconditionFailed(
            "principal score estimator requires a declared monotonicity".into(),
        )),
    }
}

/// `w̃_00(x)` for the event-free subjects of the mixed arm, rescaled to
/// average exactly 1 over them; also returns the raw (marginal-normalized)
/// weights.
pub fn principal_score_weights(ds: &TrialDataset, model: &PrincipalScoreModel) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    if model.probs.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: model.probs.len(),
        });
    }
    let (mixed, other) = score_layout(ds)?;
    let (o, a) = (StrataLabel::S00.index(), other.index());
    let n = ds.len() as f64;
    let m00 = model.probs.iter().map(|p| p[o]).sum::<f64>() / n;
    let mo = model.probs.iter().map(|p| p[a]).sum::<f64>() / n;
    let marginal = m00 / (m00 + mo);
    let idx: Vec<usize> = ds
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.in_cell(mixed, 0) && r.outcome.is_some())
        .map(|(i, _)| i)
        .collect();
    let raw: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p = model.probs[i];
            let d = p[o] + p[a];
            if d > 0.0 {
                p[o] / d / marginal
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = raw.iter().sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateWeights("principal score weights sum to zero".into()));
    }
    let scaled = raw.iter().map(|w| w * raw.len() as f64 / s).collect();
    Ok((idx, raw, scaled))
}

/// Score-weighted `S00` effect (Immune / Always-compliers).
pub fn principal_score_estimator(ds: &TrialDataset, model: &PrincipalScoreModel) -> Result<EstimateReport> {
    let (mixed, _) = score_layout(ds)?;
    let (idx, raw, w) = principal_score_weights(ds, model)?;
    let recs = ds.records();
    let mixed_mean = idx
        .iter()
        .zip(&w)
        .map(|(&i, wi)| wi * recs[i].outcome.unwrap())
        .sum::<f64>()
        / w.iter().sum::<f64>();
    let pure = cell(ds, mixed.other(), 0)?;
    let point = match mixed {
        Arm::Treated => mixed_mean - pure.mean,
        Arm::Control => pure.mean - mixed_mean,
    };
    let mut rep = EstimateReport::new("principal_score_estimator", "E[Y(1)-Y(0) | S00]", point, idx.len() + pure.n)
        .assume(&[tags::SUTVA, tags::RANDOMIZATION, tags::MONOTONICITY, tags::STRONG_PI])
        .extra("weighted_mixed_mean", mixed_mean)
        .extra("pure_mean", pure.mean)
        .extra("raw_weight_mean", stats::mean(&raw))
        .extra("em_iterations", model.em_iterations as f64)
        .extra("em_log_likelihood", model.log_likelihood);
    if !model.converged {
        rep.warn(format!(
            "EMNotConverged: principal scores taken from the best iterate after {} iterations",
            model.em_iterations
        ));
    }
    Ok(rep)
}

/// Within-stratum distribution of one covariate against the whole sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Categorical {
        covariate: String,
        categories: Vec<f64>,
        prop_stratum: Vec<f64>,
        prop_overall: Vec<f64>,
    },
    Continuous {
        covariate: String,
        grid: Vec<f64>,
        density_stratum: Vec<f64>,
        density_overall: Vec<f64>,
        mean_stratum: f64,
        mean_overall: f64,
    },
}

impl CovariateDistribution {
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        match self {
            CovariateDistribution::Categorical {
                categories,
                prop_stratum,
                prop_overall,
                ..
            } => {
                wtr.write_record(["category", "prop_stratum", "prop_overall"])?;
                for ((c, a), b) in categories.iter().zip(prop_stratum).zip(prop_overall) {
                    wtr.write_record([c.to_string(), a.to_string(), b.to_string()])?;
                }
            }
            CovariateDistribution::Continuous {
                grid,
                density_stratum,
                density_overall,
                ..
            } => {
                wtr.write_record(["grid", "density_stratum", "density_overall"])?;
                for ((g, a), b) in grid.iter().zip(density_stratum).zip(density_overall) {
                    wtr.write_record([g.to_string(), a.to_string(), b.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

/// Integer-valued covariates with at most this many levels are categorical.
pub const MAX_CATEGORIES: usize = 10;

/// Reweights the sample by each subject's probability of belonging to
/// `stratum`.
pub fn strata_covariate_distribution(
    ds: &TrialDataset,
    probs: &[[f64; 4]],
    stratum: StrataLabel,
    covariate: &str,
    grid_points: usize,
) -> Result<CovariateDistribution> {
    let j = ds
        .covariate_index(covariate)
        .ok_or_else(|| Error::MissingColumn(covariate.to_string()))?;
    if probs.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: probs.len(),
        });
    }
    let w: Vec<f64> = probs.iter().map(|p| p[stratum.index()]).collect();
    if let Some(&bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::ProbabilityOutOfRange {
            what: format!("Pr(U={})", stratum.code()),
            value: bad,
        });
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroProbabilities);
    }
    let x: Vec<f64> = ds.records().iter().map(|r| r.baseline[j]).collect();
    let mut levels: Vec<f64> = x.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let categorical = levels.len() <= MAX_CATEGORIES && x.iter().all(|v| v.fract() == 0.0);
    if categorical {
        let n = x.len() as f64;
        let prop_stratum = levels
            .iter()
            .map(|l| x.iter().zip(&w).filter(|(v, _)| *v == l).map(|(_, p)| p).sum::<f64>() / total)
            .collect();
        let prop_overall = levels
            .iter()
            .map(|l| x.iter().filter(|v| *v == l).count() as f64 / n)
            .collect();
        Ok(CovariateDistribution::Categorical {
            covariate: covariate.to_string(),
            categories: levels,
            prop_stratum,
            prop_overall,
        })
    } else {
        let ones = vec![1.0; x.len()];
        let overall = kde_grid(&x, &ones, grid_points)?;
        let density_stratum = weighted_kde(&x, &w, &overall.grid)?;
        Ok(CovariateDistribution::Continuous {
            covariate: covariate.to_string(),
            mean_stratum: x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total,
            mean_overall: overall.weighted_mean,
            grid: overall.grid,
            density_stratum,
            density_overall: overall.density,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventCoding, Monotonicity, OutcomeDirection};
    use crate::oracle::{generate, preset};

    fn rec(id: usize, trt: u8, event: u8, y: Option<f64>, x: Vec<f64>) -> SubjectRecord {
        SubjectRecord::new(id.to_string(), trt, event, y, x)
    }

    fn no_event_ds() -> TrialDataset {
        let recs: Vec<SubjectRecord> = (0..40)
            .map(|i| {
                let x = (i % 7) as f64 - 3.0;
                let t = (i % 2) as u8;
                rec(i, t, 0, Some(1.0 + 0.5 * x + t as f64 * 0.3 + ((i * 13) % 5) as f64 * 0.1), vec![x])
            })
            .collect();
        TrialDataset::new(
            recs,
            vec!["x".into()],
            vec![],
            EventCoding::adherence(Monotonicity::None),
            OutcomeDirection::LowerIsBetter,
        )
        .unwrap()
    }

    #[test]
    fn t3_t4_reduce_to_arm_difference_without_events() {
        let ds = no_event_ds();
        let t3 = no_mono_weighted(&ds, NoMonoVariant::T3).unwrap();
        let t4 = no_mono_weighted(&ds, NoMonoVariant::T4).unwrap();
        let itt = crate::basic::itt_effect(&ds).unwrap();
        assert!((t3.point - itt.point).abs() < 1e-12);
        assert!((t4.point - itt.point).abs() < 1e-12);
        assert!((t3.extras["control_minus_treated"] + itt.point).abs() < 1e-12);
    }

    #[test]
    fn t2_without_events_is_arm_difference() {
        let ds = no_event_ds();
        let t2 = strata_propensity_weighted_t2(&ds).unwrap();
        let itt = crate::basic::itt_effect(&ds).unwrap();
        assert!((t2.point - itt.point).abs() < 1e-9);
    }

    #[test]
    fn t1_is_zero_when_prediction_matches() {
        // Treated outcomes constant; control completers at that constant.
        let mut recs = Vec::new();
        for i in 0..30 {
            let x = (i % 5) as f64;
            recs.push(rec(i, 1, 0, Some(2.0), vec![x]));
            recs.push(rec(100 + i, 0, (i % 3 == 0) as u8, if i % 3 == 0 { None } else { Some(2.0) }, vec![x]));
        }
        let ds = TrialDataset::new(
            recs,
            vec!["x".into()],
            vec![],
            EventCoding::event_no_harmed(),
            OutcomeDirection::HigherIsBetter,
        )
        .unwrap();
        let r = predicted_counterfactual_t1(&ds, false).unwrap();
        assert!(r.point.abs() < 1e-10);
    }

    #[test]
    fn em_is_monotone_and_recovers_margins_without_signal() {
        let mut cfg = preset("pi_baseline").unwrap().with_n(20_000);
        if let crate::oracle::StrataMechanism::MultinomialLogit { eta, .. } = &mut cfg.strata {
            eta[0] = Some(vec![0.5, 0.0, 0.0, 0.0]);
            eta[2] = Some(vec![-0.3, 0.0, 0.0, 0.0]);
        }
        let (_, ds) = generate(&cfg, 8).unwrap();
        let m = fit_principal_scores_em(&ds).unwrap();
        assert!(m.converged);
        for w in m.ll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        for p in &m.probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert_eq!(p[StrataLabel::S01.index()], 0.0);
        }
        // Margins: π00 = Pr(S=0 | T=0), π11 = Pr(S=1 | T=1), up to the
        // covariate slopes being estimated (not fixed at zero).
        let p0 = crate::basic::p_event_free(&ds, Arm::Control).unwrap();
        let p1 = crate::basic::p_event_free(&ds, Arm::Treated).unwrap();
        let n = m.probs.len() as f64;
        let m00 = m.probs.iter().map(|p| p[0]).sum::<f64>() / n;
        let m11 = m.probs.iter().map(|p| p[3]).sum::<f64>() / n;
        assert!((m00 - p0).abs() < 0.01, "{m00} vs {p0}");
        assert!((m11 - (1.0 - p1)).abs() < 0.01);
    }

    #[test]
    fn responsibilities_respect_observed_cells() {
        let (_, ds) = generate(&preset("pi_baseline").unwrap().with_n(3000), 2).unwrap();
        let m = fit_principal_scores_em(&ds).unwrap();
        for (r, resp) in ds.records().iter().zip(m.responsibilities(&ds)) {
            if r.in_cell(Arm::Control, 0) {
                assert!((resp[0] - 1.0).abs() < 1e-12);
            }
            if r.in_cell(Arm::Treated, 1) {
                assert!((resp[3] - 1.0).abs() < 1e-12);
            }
        }
        let (_, _, w) = principal_score_weights(&ds, &m).unwrap();
        assert!((stats::mean(&w) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn covariate_distribution_identities() {
        let (_, ds) = generate(&preset("pi_baseline").unwrap().with_n(2000), 3).unwrap();
        let uniform = vec![[0.25; 4]; ds.len()];
        match strata_covariate_distribution(&ds, &uniform, StrataLabel::S00, "x3", 64).unwrap() {
            CovariateDistribution::Categorical {
                prop_stratum,
                prop_overall,
                ..
            } => {
                for (a, b) in prop_stratum.iter().zip(&prop_overall) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((prop_stratum.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            _ => panic!("x3 is binary"),
        }
        match strata_covariate_distribution(&ds, &uniform, StrataLabel::S00, "x1", 64).unwrap() {
            CovariateDistribution::Continuous {
                density_stratum,
                density_overall,
                ..
            } => {
                for (a, b) in density_stratum.iter().zip(&density_overall) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            _ => panic!("x1 is continuous"),
        }
        let zero = vec![[0.0; 4]; ds.len()];
        assert!(matches!(
            strata_covariate_distribution(&ds, &zero, StrataLabel::S00, "x1", 8),
            Err(Error::AllZeroProbabilities)
        ));
    }
}
