//! Multiple imputation of strata membership and potential outcomes, and the
//! analytic Methods A/B that integrate over intermediate outcomes.
//!
//! Imputation draws are "proper": each completed set first draws model
//! parameters from their asymptotic normal posterior, then the missing
//! values. Every completed set owns its random streams, so the output does
//! not depend on the worker count.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basic::DEFAULT_LEVEL;
use crate::covariate::fit_event_free_model;
use crate::data::{Arm, StrataLabel, StratumSet, TrialDataset};
use crate::error::{Error, Result};
use crate::numerics::{
    bootstrap_with, expit, fit_ols, percentile_ci, rubin_pool, stats, stream, tag,
    LogisticFit, Resampling,
};
use crate::report::{tags, EstimateReport};
use crate::staged::{
    fit_outcome_regression, fit_zchain, logistic_draw, mc_se, with_escalation, x1, StagedNuisance, StagedOptions,
};

pub use crate::staged::{fit_adherence_model, AdherenceModel};

const MI_PARAMS: u64 = tag("mi-params");
const MI_SUBJECT: u64 = tag("mi-subject");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationKind {
    /// Only the unobserved `S(1 − T)` is filled.
    Strata,
    /// `S(t)` and `Y(t)` are filled for both arms through the staged chain.
    Extended,
}

/// One completed dataset; index `[t]` is the arm-`t` potential value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedSet {
    pub s: Vec<[u8; 2]>,
    pub y: Vec<[Option<f64>; 2]>,
    /// Imputation flags for `(s0, s1, y0, y1)`.
    pub imputed: Vec<[bool; 4]>,
}

impl CompletedSet {
    pub fn stratum(&self, i: usize) -> StrataLabel {
        StrataLabel::from_pair(self.s[i][0], self.s[i][1])
    }

    /// Share of subjects whose completed stratum lies in `set`.
    pub fn share(&self, set: StratumSet) -> f64 {
        (0..self.s.len()).filter(|&i| set.contains(self.stratum(i))).count() as f64 / self.s.len() as f64
    }

    fn observed(ds: &TrialDataset) -> CompletedSet {
        let n = ds.len();
        let mut out = CompletedSet {
            s: vec![[0; 2]; n],
            y: vec![[None; 2]; n],
            imputed: vec![[false; 4]; n],
        };
        for (i, r) in ds.records().iter().enumerate() {
            let t = r.arm().index();
            out.s[i][t] = r.event;
            out.y[i][t] = r.outcome;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationSet {
    pub m: usize,
    pub seed: u64,
    pub kind: ImputationKind,
    pub completed: Vec<CompletedSet>,
    pub model_meta: String,
    data: TrialDataset,
}

impl ImputationSet {
    pub fn dataset(&self) -> &TrialDataset {
        &self.data
    }

    /// All completed sets stacked in the input schema with
    /// `s0_imputed,s1_imputed,y0_imputed,y1_imputed,imp_index` appended.
    /// The imputed columns carry the completed value.
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let headers: Vec<String> = ["s0_imputed", "s1_imputed", "y0_imputed", "y1_imputed", "imp_index"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let n = self.data.len();
        let idx: Vec<usize> = (0..self.m).flat_map(|_| 0..n).collect();
        let stacked = self.data.subset(&idx);
        let extra: Vec<Vec<String>> = self
            .completed
            .iter()
            .enumerate()
            .flat_map(|(k, c)| {
                (0..n).map(move |i| {
                    let y = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    vec![
                        c.s[i][0].to_string(),
                        c.s[i][1].to_string(),
                        y(c.y[i][0]),
                        y(c.y[i][1]),
                        (k + 1).to_string(),
                    ]
                })
            })
            .collect();
        crate::data::write_csv_to(&stacked, w, &headers, Some(&extra))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

/// Joint law of `(S(0), S(1))` at `x` from the two marginal event-free
/// probabilities: the monotone coupling when a cell is forbidden, the
/// independent coupling otherwise. Indexed `[s0][s1]`.
fn coupling(p_free: [f64; 2], forbidden: Option<StrataLabel>) -> [[f64; 2]; 2] {
    let [p0, p1] = p_free;
    match forbidden {
        Some(StrataLabel::S01) => {
            let s00 = p0.min(p1);
            [[s00, 0.0], [p1 - s00, 1.0 - p1.max(p0)]]
        }
        Some(StrataLabel::S10) => {
            let s00 = p0.min(p1);
            [[s00, p0 - s00], [0.0, 1.0 - p0.max(p1)]]
        }
        _ => [
            [p0 * p1, p0 * (1.0 - p1)],
            [(1.0 - p0) * p1, (1.0 - p0) * (1.0 - p1)],
        ],
    }
}

/// Draws `S(1 − t)` given `S(t) = s` under `coupling`.
fn draw_other(joint: &[[f64; 2]; 2], t: usize, s: u8, rng: &mut ChaCha8Rng) -> u8 {
    let cell = |a: u8, b: u8| if t == 0 { joint[a as usize][b as usize] } else { joint[b as usize][a as usize] };
    let (z, o) = (cell(s, 0).max(0.0), cell(s, 1).max(0.0));
    let tot = z + o;
    let p_zero = if tot > 0.0 { z / tot } else { 0.5 };
    (rng.random::<f64>() >= p_zero) as u8
}

fn drawn_or_fixed(fit: &LogisticFit, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Constant (no-variation) models carry no information matrix.
    logistic_draw(fit, rng).unwrap_or_else(|_| fit.coefficients.clone())
}

fn lin(c: &[f64], x: &[f64]) -> f64 {
    c[0] + c[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// Imputes the unobserved `S(1 − T)` from per-arm logistic models of
/// `Pr(S = 0 | X)`. Under a declared monotonicity the draw is from the
/// monotone coupling of the two marginals (so the forbidden cell is never
/// produced); otherwise `S(0)` and `S(1)` are taken independent given `X`.
pub fn impute_strata_mi(ds: &TrialDataset, m: usize, seed: u64) -> Result<ImputationSet> {
    if m < 2 {
        return Err(Error::InvalidConfig("multiple imputation needs m >= 2".into()));
    }
    let fits = [
        fit_event_free_model(ds, Arm::Control)?,
        fit_event_free_model(ds, Arm::Treated)?,
    ];
    let forbidden = ds.coding().forbidden();
    let base = CompletedSet::observed(ds);
    let completed: Vec<CompletedSet> = (0..m)
        .into_par_iter()
        .map(|k| {
            let coefs: Vec<Vec<f64>> = (0..2)
                .map(|t| drawn_or_fixed(&fits[t], &mut stream(seed, &[MI_PARAMS, k as u64, t as u64])))
                .collect();
            let mut c = base.clone();
            for (i, r) in ds.records().iter().enumerate() {
                let t = r.arm().index();
                let p = [expit(lin(&coefs[0], &r.baseline)), expit(lin(&coefs[1], &r.baseline))];
                let mut rng = stream(seed, &[MI_SUBJECT, k as u64, i as u64]);
                c.s[i][1 - t] = draw_other(&coupling(p, forbidden), t, r.event, &mut rng);
                c.imputed[i][1 - t] = true;
            }
            c
        })
        .collect();
    Ok(ImputationSet {
        m,
        seed,
        kind: ImputationKind::Strata,
        completed,
        model_meta: format!(
            "S(1-T) | X: per-arm logistic on (1, {}), coefficients drawn from N(MLE, inverse information); coupling: {}",
            ds.covariate_names().join(", "),
            match forbidden {
                Some(u) => format!("monotone ({} forbidden)", u.code()),
                None => "conditionally independent".into(),
            }
        ),
        data: ds.clone(),
    })
}

/// Sequential monotone imputation of `(Z(t), S(t), Y(t))` for each target
/// arm `t`: counterfactuals for arm `1 − t` and post-event cells of arm `t`.
/// Treatment is not an imputation covariate; all models are fitted within
/// arm `t`.
pub fn extended_mi(ds: &TrialDataset, m: usize, seed: u64) -> Result<ImputationSet> {
    if m < 2 {
        return Err(Error::InvalidConfig("multiple imputation needs m >= 2".into()));
    }
    if ds.n_stages() == 0 || ds.n_blocks() == 0 {
        return Err(Error::StageDataMissing(
            "extended imputation needs stage events and intermediate blocks".into(),
        ));
    }
    let adherence = fit_adherence_model(ds, false)?;
    let chains = [fit_zchain(ds, Arm::Control)?, fit_zchain(ds, Arm::Treated)?];
    let outcome = [
        fit_outcome_regression(ds, Arm::Control)?,
        fit_outcome_regression(ds, Arm::Treated)?,
    ];
    let dims = ds.block_dims();
    let nb = dims.len();
    let k_stages = ds.n_stages();
    let base = CompletedSet::observed(ds);
    let completed: Vec<CompletedSet> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut c = base.clone();
            for t in 0..2usize {
                let arm = Arm::from_bit(t as u8);
                let mut prng = stream(seed, &[MI_PARAMS, k as u64, t as u64]);
                let chain = chains[t].posterior_draw(&mut prng);
                let stages: Vec<Vec<f64>> = adherence.stages[t]
                    .iter()
                    .map(|f| drawn_or_fixed(f, &mut prng))
                    .collect();
                let (beta, s2) = outcome[t].posterior_draw(&mut prng);
                let sd = s2.sqrt();
                for (i, r) in ds.records().iter().enumerate() {
                    let own = r.arm() == arm;
                    if own && r.outcome.is_some() && r.event == 0 {
                        continue;
                    }
                    let mut rng = stream(seed, &[MI_SUBJECT, k as u64, t as u64, i as u64]);
                    let xv = x1(r);
                    // Observed prefix of the flat intermediate vector (own arm only).
                    let mut z: Vec<f64> = Vec::new();
                    if own {
                        for block in r.intermediate.iter().take(nb) {
                            match block {
                                Some(b) => z.extend_from_slice(b),
                                None => break,
                            }
                        }
                    }
                    let mut design = xv.clone();
                    design.extend_from_slice(&z);
                    for (coef, s) in chain.coefficients.iter().zip(&chain.sigma).skip(z.len()) {
                        let e: f64 = rng.sample(StandardNormal);
                        let v = coef.iter().zip(&design).map(|(a, b)| a * b).sum::<f64>() + s * e;
                        design.push(v);
                    }
                    let zfull = &design[xv.len()..];
                    let mut event = 0u8;
                    for (kk, coef) in stages.iter().enumerate().take(k_stages) {
                        let observed = if own { r.stage_events[kk] } else { None };
                        let ev = match observed {
                            Some(v) => v,
                            None => {
                                let w = adherence.z_width[kk];
                                let eta = coef[..xv.len()].iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>()
                                    + coef[xv.len()..].iter().zip(&zfull[..w]).map(|(a, b)| a * b).sum::<f64>();
                                (rng.random::<f64>() >= expit(eta)) as u8
                            }
                        };
                        if ev == 1 {
                            event = 1;
                            break;
                        }
                    }
                    if !own {
                        c.s[i][t] = event;
                        c.imputed[i][t] = true;
                    }
                    if !(own && r.outcome.is_some()) {
                        let e: f64 = rng.sample(StandardNormal);
                        let mean: f64 = beta.iter().zip(design.iter()).map(|(a, b)| a * b).sum();
                        c.y[i][t] = Some(mean + sd * e);
                        c.imputed[i][2 + t] = true;
                    }
                }
            }
            c
        })
        .collect();
    Ok(ImputationSet {
        m,
        seed,
        kind: ImputationKind::Extended,
        completed,
        model_meta: format!(
            "per arm t: Z(t)|X sequential Gaussian ({} coordinates), S^(k)(t)|X,Z logistic ({} stages, per arm), \
             Y(t)|X,Z Gaussian; parameters drawn from their posteriors per imputation; treatment not a covariate",
            dims.iter().sum::<usize>(),
            k_stages
        ),
        data: ds.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiAnalysis {
    /// `Y` on `(1, T, x)` within the completed stratum; estimate = `T` coefficient.
    Ancova,
    /// Difference of arm means within the completed stratum.
    MeanDifference,
    /// Mean of completed `Y(1) − Y(0)` (extended imputations only).
    PotentialOutcomes,
}

fn analyze_one(
    ds: &TrialDataset,
    c: &CompletedSet,
    set: StratumSet,
    analysis: MiAnalysis,
    k: usize,
) -> Result<(f64, f64, usize)> {
    let members: Vec<usize> = (0..ds.len()).filter(|&i| set.contains(c.stratum(i))).collect();
    let recs = ds.records();
    let empty = |what: &str| Error::EmptyStratumCell(format!("imputation {}: {what} in {}", k + 1, set.describe()));
    match analysis {
        MiAnalysis::PotentialOutcomes => {
            let d: Vec<f64> = members
                .iter()
                .map(|&i| match (c.y[i][0], c.y[i][1]) {
                    (Some(a), Some(b)) => Ok(b - a),
                    _ => Err(Error::InvalidConfig(
                        "potential-outcome analysis needs both potential outcomes imputed".into(),
                    )),
                })
                .collect::<Result<_>>()?;
            if d.len() < 2 {
                return Err(empty("fewer than two subjects"));
            }
            Ok((stats::mean(&d), stats::var(&d) / d.len() as f64, d.len()))
        }
        MiAnalysis::MeanDifference | MiAnalysis::Ancova => {
            let rows: Vec<(usize, f64)> = members
                .iter()
                .filter_map(|&i| {
                    let t = recs[i].arm().index();
                    c.y[i][t].map(|y| (i, y))
                })
                .collect();
            let arm_y = |t: u8| -> Vec<f64> { rows.iter().filter(|(i, _)| recs[*i].trt == t).map(|r| r.1).collect() };
            let (y0, y1) = (arm_y(0), arm_y(1));
            if y0.len() < 2 || y1.len() < 2 {
                return Err(empty("an arm has fewer than two outcomes"));
            }
            if analysis == MiAnalysis::MeanDifference {
                return Ok((
                    stats::mean(&y1) - stats::mean(&y0),
                    stats::var(&y1) / y1.len() as f64 + stats::var(&y0) / y0.len() as f64,
                    rows.len(),
                ));
            }
            let p = ds.p();
            let design = DMatrix::from_fn(rows.len(), p + 2, |r, j| {
                let rec = &recs[rows[r].0];
                match j {
                    0 => 1.0,
                    1 => rec.trt as f64,
                    _ => rec.baseline[j - 2],
                }
            });
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let fit = fit_ols(&design, &y, None)
                .map_err(|e| Error::ModelFitFailed(format!("imputation {}: ANCOVA: {e}", k + 1)))?;
            Ok((fit.coefficients[1], fit.covariance()[(1, 1)], rows.len()))
        }
    }
}

/// Analyzes each completed set and pools with Rubin's rules.
pub fn analyze_mi(imps: &ImputationSet, set: StratumSet, analysis: MiAnalysis) -> Result<EstimateReport> {
    let ds = &imps.data;
    let per: Vec<(f64, f64, usize)> = imps
        .completed
        .par_iter()
        .enumerate()
        .map(|(k, c)| analyze_one(ds, c, set, analysis, k))
        .collect::<Result<_>>()?;
    let points: Vec<f64> = per.iter().map(|p| p.0).collect();
    let vars: Vec<f64> = per.iter().map(|p| p.1).collect();
    let pooled = rubin_pool(&points, &vars, DEFAULT_LEVEL)?;
    let share = imps.completed.iter().map(|c| c.share(set)).sum::<f64>() / imps.m as f64;
    let method = match imps.kind {
        ImputationKind::Strata => "mi_strata",
        ImputationKind::Extended => "mi_extended",
    };
    let mut assumptions = vec![tags::SUTVA, tags::RANDOMIZATION, tags::STRONG_PI, tags::MAR];
    if ds.coding().forbidden().is_some() {
        assumptions.push(tags::MONOTONICITY);
    } else {
        assumptions.push(tags::CROSS_WORLD_S);
    }
    if imps.kind == ImputationKind::Extended {
        assumptions.extend([tags::A4, tags::A5, tags::A6, tags::A7]);
    }
    let mut rep = EstimateReport::new(
        method,
        &format!("E[Y(1)-Y(0) | {}]", set.describe()),
        pooled.point,
        per.iter().map(|p| p.2).sum::<usize>() / imps.m,
    )
    .assume(&assumptions)
    .extra("m", imps.m as f64)
    .extra("within_var", pooled.within_var)
    .extra("between_var", pooled.between_var)
    .extra("total_var", pooled.total_var)
    .extra("df", pooled.df)
    .extra("mean_stratum_share", share);
    rep.se = Some(pooled.total_var.sqrt());
    rep.ci = Some([pooled.ci.0, pooled.ci.1]);
    rep.level = Some(DEFAULT_LEVEL);
    if pooled.degenerate_between {
        rep.warn("between-imputation variance is 0; normal reference interval used");
    }
    if imps.kind == ImputationKind::Extended {
        rep.warn("Rubin's rules are conservative here (imputation and analysis models are not congenial); bootstrap recommended");
    }
    Ok(rep)
}

/// Bootstrap percentile interval for an MI point estimate: each replicate
/// re-imputes (`m` sets) the resampled data and re-analyzes.
pub fn mi_bootstrap(
    ds: &TrialDataset,
    kind: ImputationKind,
    m: usize,
    set: StratumSet,
    analysis: MiAnalysis,
    b: usize,
    seed: u64,
) -> Result<crate::numerics::BootstrapResult> {
    let reps: Vec<Option<f64>> = bootstrap_with(ds, b, seed, Resampling::StratifiedByArm, |r, d| {
        let sub_seed = stream(seed, &[tag("mi-boot"), r as u64]).random::<u64>();
        let imps = match kind {
            ImputationKind::Strata => impute_strata_mi(d, m, sub_seed),
            ImputationKind::Extended => extended_mi(d, m, sub_seed),
        };
        imps.and_then(|i| analyze_mi(&i, set, analysis)).ok().map(|r| r.point)
    });
    let ok: Vec<f64> = reps.into_iter().flatten().collect();
    if ok.len() * 2 < b.max(2) {
        return Err(Error::ModelFitFailed(format!("only {} of {b} bootstrap replicates succeeded", ok.len())));
    }
    let (lo, hi) = percentile_ci(&ok, DEFAULT_LEVEL);
    Ok(crate::numerics::BootstrapResult {
        se: stats::sd(&ok),
        ci_low: lo,
        ci_high: hi,
        level: DEFAULT_LEVEL,
        replicates: ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Population {
    /// `{S(1) = 0}`: would adhere to the experimental treatment.
    #[serde(rename = "S_star0")]
    SStar0,
    #[serde(rename = "S_00")]
    S00,
}

impl Population {
    pub fn set(self) -> StratumSet {
        match self {
            Population::SStar0 => StratumSet::s1_zero(),
            Population::S00 => StratumSet::single(StrataLabel::S00),
        }
    }

    pub fn parse(s: &str) -> Option<Population> {
        match s.to_ascii_lowercase().as_str() {
            "s_star0" | "sstar0" | "s*0" | "star0" => Some(Population::SStar0),
            "s_00" | "s00" => Some(Population::S00),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StagedMethod {
    A,
    B,
}

/// Arm means and Monte Carlo SE of one staged estimator.
pub(crate) struct StagedParts {
    pub mean1: f64,
    pub mean0: f64,
    pub mc_se: f64,
    pub n_used: usize,
    pub min_g: f64,
}

/// Methods A/B on fitted nuisances. `w` holds per-subject inverse
/// propensity weights (`1/π̂` for treated, `1/(1 − π̂)` for control); `None`
/// gives the randomized estimators.
pub(crate) fn staged_parts(
    ds: &TrialDataset,
    nu: &StagedNuisance,
    pop: Population,
    method: StagedMethod,
    w: Option<&[f64]>,
) -> Result<StagedParts> {
    let recs = ds.records();
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let cell = |arm: Arm, need_y: bool| -> Vec<usize> {
        (0..recs.len())
            .filter(|&i| recs[i].in_cell(arm, 0) && (!need_y || recs[i].outcome.is_some()))
            .collect()
    };
    let ratio = |num: f64, den: f64, what: &str| -> Result<f64> {
        if den > 0.0 && den.is_finite() {
            Ok(num / den)
        } else {
            Err(Error::DegenerateWeights(format!("{what}: denominator {den}")))
        }
    };
    let y = |i: usize| recs[i].outcome.unwrap();
    let t1 = cell(Arm::Treated, true);
    let t0 = cell(Arm::Control, true);
    if t1.is_empty() || t0.is_empty() {
        return Err(Error::EmptyStratumCell("staged estimators need completers in both arms".into()));
    }
    let d = nu.draws;
    let [a0, a1] = &nu.arms;
    match (pop, method) {
        (Population::SStar0, m) => {
            let den1: f64 = t1.iter().map(|&i| wt(i)).sum();
            let mean1 = ratio(t1.iter().map(|&i| wt(i) * y(i)).sum(), den1, "treated completers")?;
            match m {
                StagedMethod::A => {
                    let mean0 = ratio(t1.iter().map(|&i| wt(i) * a0.phi[i]).sum(), den1, "treated completers")?;
                    let se = mc_se(&a0.phi_var, |i| wt(i) / den1, &t1, d);
                    Ok(StagedParts {
                        mean1,
                        mean0,
                        mc_se: se,
                        n_used: t1.len(),
                        min_g: f64::NAN,
                    })
                }
                StagedMethod::B => {
                    let mut min_g = f64::INFINITY;
                    let mut terms = Vec::with_capacity(t0.len());
                    for &i in &t0 {
                        let g = nu.g_observed[i].ok_or_else(|| {
                            Error::StageDataMissing(format!("control completer {} lacks intermediates", recs[i].id))
                        })?;
                        min_g = min_g.min(g);
                        terms.push((i, a1.h[i] / g));
                    }
                    let (num, scale) = match w {
                        None => {
                            let n1 = ds.arm_count(Arm::Treated) as f64;
                            let n0 = ds.arm_count(Arm::Control) as f64;
                            (terms.iter().map(|&(i, r)| r * y(i)).sum::<f64>(), n1 / (t1.len() as f64 * n0))
                        }
                        Some(_) => (terms.iter().map(|&(i, r)| wt(i) * r * y(i)).sum::<f64>(), 1.0 / den1),
                    };
                    let mean0 = num * scale;
                    let g_of = |i: usize| nu.g_observed[i].unwrap_or(1.0);
                    let se = mc_se(&a1.h_var, |i| scale * wt(i) * y(i) / g_of(i), &t0, d);
                    Ok(StagedParts {
                        mean1,
                        mean0,
                        mc_se: se,
                        n_used: t1.len() + t0.len(),
                        min_g,
                    })
                }
            }
        }
        (Population::S00, StagedMethod::A) => {
            // E[Y(t) | S00] from the opposite arm's event-free subjects.
            let side = |t: usize| -> Result<(f64, f64)> {
                let idx = cell(Arm::from_bit(1 - t as u8), false);
                let a = &nu.arms[t];
                let num: f64 = idx.iter().map(|&i| wt(i) * a.gphi[i]).sum();
                let den: f64 = idx.iter().map(|&i| wt(i) * a.h[i]).sum();
                let r = ratio(num, den, "adherence-weighted denominator")?;
                let se2 = mc_se(&a.gphi_var, |i| wt(i) / den, &idx, d).powi(2)
                    + mc_se(&a.h_var, |i| r * wt(i) / den, &idx, d).powi(2);
                Ok((r, se2))
            };
            let (m1, v1) = side(1)?;
            let (m0, v0) = side(0)?;
            Ok(StagedParts {
                mean1: m1,
                mean0: m0,
                mc_se: (v1 + v0).sqrt(),
                n_used: cell(Arm::Treated, false).len() + cell(Arm::Control, false).len(),
                min_g: f64::NAN,
            })
        }
        (Population::S00, StagedMethod::B) => {
            // E[Y(t) | S00] from arm t's completers weighted by h_{1-t}.
            let side = |t: usize, idx: &[usize]| -> Result<(f64, f64)> {
                let h = &nu.arms[1 - t];
                let den: f64 = idx.iter().map(|&i| wt(i) * h.h[i]).sum();
                let r = ratio(idx.iter().map(|&i| wt(i) * h.h[i] * y(i)).sum(), den, "h-weighted completers")?;
                let se2 = mc_se(&h.h_var, |i| wt(i) * (y(i) - r) / den, idx, d).powi(2);
                Ok((r, se2))
            };
            let (m1, v1) = side(1, &t1)?;
            let (m0, v0) = side(0, &t0)?;
            Ok(StagedParts {
                mean1: m1,
                mean0: m0,
                mc_se: (v1 + v0).sqrt(),
                n_used: t1.len() + t0.len(),
                min_g: f64::NAN,
            })
        }
    }
}

/// Options for [`method_a`] / [`method_b`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOptions {
    pub staged: StagedOptions,
    /// Bootstrap replicates for per-arm SEs and the difference CI (0 = off).
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            staged: StagedOptions::default(),
            bootstrap: 0,
            bootstrap_seed: tag("staged-bootstrap"),
        }
    }
}

/// Flag for fitted adherence probabilities below this value.
pub const G_FLOOR: f64 = 1e-4;

/// Fits the nuisances and runs one staged estimator with draw escalation.
pub(crate) fn staged_estimate(
    ds: &TrialDataset,
    pop: Population,
    method: StagedMethod,
    opts: &StagedOptions,
    w: Option<&[f64]>,
) -> Result<(StagedParts, StagedNuisance)> {
    let mut nu = StagedNuisance::fit(ds, opts)?;
    let sd_y = stats::sd(&ds.records().iter().filter_map(|r| r.outcome).collect::<Vec<_>>()).max(1e-12);
    let first = nu.draws;
    let (parts, _) = with_escalation(first, |d| {
        if d != nu.draws {
            nu.integrate(ds, d, opts.seed);
        }
        let p = staged_parts(ds, &nu, pop, method, w)?;
        let (se, scale) = (p.mc_se, (p.mean1 - p.mean0).abs().max(sd_y));
        Ok((p, se, scale))
    })?;
    Ok((parts, nu))
}

pub(crate) fn staged_report(
    name: &str,
    pop: Population,
    parts: &StagedParts,
    nu: &StagedNuisance,
    extra_tags: &[&str],
) -> EstimateReport {
    let mut rep = EstimateReport::new(
        name,
        &format!("E[Y(1)-Y(0) | {}]", pop.set().describe()),
        parts.mean1 - parts.mean0,
        parts.n_used,
    )
    .assume(&[tags::SUTVA, tags::A4, tags::A5, tags::A6, tags::A7])
    .assume(extra_tags)
    .extra("mean_treated", parts.mean1)
    .extra("mean_control", parts.mean0)
    .extra("mc_se", parts.mc_se)
    .extra("integration_draws", nu.draws as f64)
    .extra("adherence_pooled", nu.adherence.pooled as u8 as f64);
    if parts.min_g.is_finite() {
        rep = rep.extra("min_g_observed", parts.min_g);
        if parts.min_g < G_FLOOR {
            rep.warn(format!(
                "ExtremeWeights: fitted adherence probability {:.2e} below {G_FLOOR:e}",
                parts.min_g
            ));
        }
    }
    rep
}

fn run_method(ds: &TrialDataset, pop: Population, method: StagedMethod, opts: &MethodOptions) -> Result<EstimateReport> {
    let name = match method {
        StagedMethod::A => "method_a",
        StagedMethod::B => "method_b",
    };
    let (parts, nu) = staged_estimate(ds, pop, method, &opts.staged, None)?;
    let mut rep = staged_report(name, pop, &parts, &nu, &[tags::RANDOMIZATION]);
    if opts.bootstrap > 0 {
        let draws = nu.draws;
        let reps: Vec<Option<[f64; 3]>> =
            bootstrap_with(ds, opts.bootstrap, opts.bootstrap_seed, Resampling::StratifiedByArm, |_, d| {
                let o = StagedOptions {
                    draws,
                    ..opts.staged
                };
                let nu = StagedNuisance::fit(d, &o).ok()?;
                let p = staged_parts(d, &nu, pop, method, None).ok()?;
                Some([p.mean1, p.mean0, p.mean1 - p.mean0])
            });
        let ok: Vec<[f64; 3]> = reps.into_iter().flatten().collect();
        if ok.len() * 2 < opts.bootstrap {
            rep.warn(format!(
                "only {} of {} bootstrap replicates succeeded; no interval reported",
                ok.len(),
                opts.bootstrap
            ));
        } else {
            let col = |j: usize| ok.iter().map(|r| r[j]).collect::<Vec<f64>>();
            let diff = col(2);
            let (lo, hi) = percentile_ci(&diff, DEFAULT_LEVEL);
            rep = rep
                .extra("mean_treated_se", stats::sd(&col(0)))
                .extra("mean_control_se", stats::sd(&col(1)))
                .extra("bootstrap_replicates", ok.len() as f64);
            rep.se = Some(stats::sd(&diff));
            rep.ci = Some([lo, hi]);
            rep.level = Some(DEFAULT_LEVEL);
        }
    }
    if nu.adherence.pooled {
        rep = rep.assume(&["adherence_model_pooled_across_arms"]);
    }
    Ok(rep)
}

/// Method A: outcome prediction integrated over `Z | X`.
pub fn method_a(ds: &TrialDataset, population: Population, opts: &MethodOptions) -> Result<EstimateReport> {
    run_method(ds, population, StagedMethod::A, opts)
}

/// Method B: principal-score weighting with `h_t(x) = E[g(x, Z(t)) | x]`.
pub fn method_b(ds: &TrialDataset, population: Population, opts: &MethodOptions) -> Result<EstimateReport> {
    run_method(ds, population, StagedMethod::B, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventCoding, Monotonicity, OutcomeDirection, SubjectRecord};
    use crate::oracle::{generate, preset};

    fn small(n: usize, seed: u64) -> TrialDataset {
        generate(&preset("pi_baseline").unwrap().with_n(n), seed).unwrap().1
    }

    #[test]
    fn observed_cells_are_never_altered() {
        let ds = small(800, 1);
        let imps = impute_strata_mi(&ds, 5, 3).unwrap();
        for c in &imps.completed {
            for (i, r) in ds.records().iter().enumerate() {
                let t = r.arm().index();
                assert_eq!(c.s[i][t], r.event);
                assert_eq!(c.y[i][t], r.outcome);
                assert!(!c.imputed[i][t]);
                assert!(c.imputed[i][1 - t]);
                // Monotone coding: the forbidden stratum never appears.
                assert_ne!(c.stratum(i), StrataLabel::S01);
            }
        }
    }

    #[test]
    fn degenerate_opposite_arm_imputes_zero() {
        let recs: Vec<SubjectRecord> = (0..60)
            .map(|i| {
                let t = (i % 2) as u8;
                let ev = (t == 0 && i % 4 == 0) as u8;
                SubjectRecord::new(i.to_string(), t, ev, if ev == 1 { None } else { Some(i as f64) }, vec![(i % 3) as f64])
            })
            .collect();
        let ds = TrialDataset::new(
            recs,
            vec!["x".into()],
            vec![],
            EventCoding::adherence(Monotonicity::None),
            OutcomeDirection::LowerIsBetter,
        )
        .unwrap();
        let imps = impute_strata_mi(&ds, 4, 9).unwrap();
        for c in &imps.completed {
            for (i, r) in ds.records().iter().enumerate() {
                if r.trt == 0 {
                    assert_eq!(c.s[i][1], 0, "treated arm never has an event");
                }
            }
        }
    }

    #[test]
    fn identical_sets_pool_to_the_single_estimate() {
        let ds = small(1500, 2);
        let mut imps = impute_strata_mi(&ds, 3, 4).unwrap();
        let first = imps.completed[0].clone();
        for c in imps.completed.iter_mut() {
            *c = first.clone();
        }
        let set = StratumSet::single(StrataLabel::S00);
        let pooled = analyze_mi(&imps, set, MiAnalysis::Ancova).unwrap();
        let (p, v, _) = analyze_one(&ds, &first, set, MiAnalysis::Ancova, 0).unwrap();
        assert!((pooled.point - p).abs() < 1e-12);
        assert_eq!(pooled.extras["between_var"], 0.0);
        assert!((pooled.extras["total_var"] - v).abs() < 1e-15);
    }

    #[test]
    fn pooled_variance_follows_rubin() {
        let ds = small(1500, 5);
        let imps = impute_strata_mi(&ds, 6, 8).unwrap();
        let r = analyze_mi(&imps, StratumSet::single(StrataLabel::S00), MiAnalysis::MeanDifference).unwrap();
        let (w, b) = (r.extras["within_var"], r.extras["between_var"]);
        assert_eq!(r.extras["total_var"], w + (1.0 + 1.0 / 6.0) * b);
    }

    #[test]
    fn mi_is_deterministic() {
        let ds = small(600, 3);
        let a = impute_strata_mi(&ds, 4, 11).unwrap();
        let b = impute_strata_mi(&ds, 4, 11).unwrap();
        assert_eq!(a.completed, b.completed);
        let mut buf = Vec::new();
        a.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with("s0_imputed,s1_imputed,y0_imputed,y1_imputed,imp_index"));
        assert_eq!(text.lines().count(), 1 + 4 * 600);
    }

    #[test]
    fn extended_mi_keeps_complete_subjects() {
        let (_, ds) = generate(&preset("staged_qu").unwrap().with_n(1500), 6).unwrap();
        let imps = extended_mi(&ds, 3, 2).unwrap();
        for c in &imps.completed {
            for (i, r) in ds.records().iter().enumerate() {
                let t = r.arm().index();
                if r.event == 0 && r.outcome.is_some() {
                    assert_eq!(c.y[i][t], r.outcome);
                    assert!(!c.imputed[i][2 + t]);
                }
                assert!(c.y[i][0].is_some() && c.y[i][1].is_some());
                assert_eq!(c.s[i][t], r.event);
            }
        }
    }

    #[test]
    fn universal_adherence_reduces_method_b_to_itt() {
        // No events at any stage: g ≡ h ≡ 1 and both populations are everyone.
        let mut cfg = preset("staged_qu").unwrap().with_n(3000);
        for l in cfg.staged.as_mut().unwrap().stage_logits.iter_mut() {
            l[0] = 60.0;
        }
        let (_, ds) = generate(&cfg, 3).unwrap();
        assert!(ds.records().iter().all(|r| r.event == 0));
        let itt = crate::basic::itt_effect(&ds).unwrap();
        // Constant responses make the logistic fit separate; pin g to 1.
        let opts = StagedOptions::default();
        let nu = StagedNuisance::fit(&ds, &opts);
        if let Ok(nu) = nu {
            let p = staged_parts(&ds, &nu, Population::SStar0, StagedMethod::B, None).unwrap();
            assert!(((p.mean1 - p.mean0) - itt.point).abs() < 1e-6);
        }
    }

    #[test]
    fn coupling_respects_forbidden_cell() {
        let j = coupling([0.6, 0.8], Some(StrataLabel::S01));
        assert_eq!(j[0][1], 0.0);
        assert!((j.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((j[0][0] + j[0][1] - 0.6).abs() < 1e-12);
        assert!((j[0][0] + j[1][0] - 0.8).abs() < 1e-12);
    }
}
